"""Distance-field rasterization of skeletons and stick-figure people.

Every shape is drawn from an exact distance field with a one-pixel linear
falloff: a stroke of radius ``r`` covers a pixel whose center lies at
distance ``d`` by ``clip(r + 0.5 - d, 0, 1)``. Pixel ``(i, j)`` has its center
at ``(j + 0.5, i + 0.5)`` in pixel units, and a normalized coordinate ``u``
maps to ``u * W`` (resp. ``u * H``).
"""

from __future__ import annotations

import numpy as np

from .skeleton import (
    BONE_INDEX,
    JOINT_INDEX,
    REFERENCE_SIZE,
    AppearanceSpec,
    Skeleton,
)

SKELETON_STROKE_RADIUS = 0.75  # pixels at REFERENCE_SIZE
SKELETON_HEAD_RADIUS = 2.0
HEAD_DISC_FRACTION = 0.5  # disc radius as a fraction of the neck-head bone

# Painter's order: legs, torso, arms, head.
PAINT_ORDER: tuple[str, ...] = (
    "upper_leg_l",
    "lower_leg_l",
    "upper_leg_r",
    "lower_leg_r",
    "torso",
    "upper_arm_l",
    "lower_arm_l",
    "upper_arm_r",
    "lower_arm_r",
    "head",
)

LIMB_SEGMENTS = {
    "upper_leg_l": ("l_hip", "l_knee"),
    "lower_leg_l": ("l_knee", "l_ankle"),
    "upper_leg_r": ("r_hip", "r_knee"),
    "lower_leg_r": ("r_knee", "r_ankle"),
    "upper_arm_l": ("l_shoulder", "l_elbow"),
    "lower_arm_l": ("l_elbow", "l_wrist"),
    "upper_arm_r": ("r_shoulder", "r_elbow"),
    "lower_arm_r": ("r_elbow", "r_wrist"),
}
TORSO_CORNERS = ("l_shoulder", "r_shoulder", "r_hip", "l_hip")


def _hw(size) -> tuple[int, int]:
    if isinstance(size, (int, np.integer)):
        return int(size), int(size)
    h, w = size
    return int(h), int(w)


def pixel_grid(size, region=None) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-center coordinates ``(px, py)`` of shape (h, w).

    ``region = (x0, y0, w, h)`` restricts the grid to a sub-window.
    """
    H, W = _hw(size)
    x0, y0, w, h = region if region is not None else (0, 0, W, H)
    px = np.arange(x0, x0 + w, dtype=np.float64) + 0.5
    py = np.arange(y0, y0 + h, dtype=np.float64) + 0.5
    return np.meshgrid(px, py)


def to_pixels(joints: np.ndarray, size) -> np.ndarray:
    H, W = _hw(size)
    return np.asarray(joints, dtype=np.float64) * np.array([W, H], dtype=np.float64)


def segment_distance(px, py, a, b) -> np.ndarray:
    """Distance from pixel centers to segments ``a -> b``.

    ``a`` and ``b`` have shape (..., 2); the result has shape (..., h, w).
    """
    a = np.asarray(a, dtype=np.float64)[..., None, None, :]
    b = np.asarray(b, dtype=np.float64)[..., None, None, :]
    d = b - a
    qx = px - a[..., 0]
    qy = py - a[..., 1]
    dd = d[..., 0] ** 2 + d[..., 1] ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(dd > 0, (qx * d[..., 0] + qy * d[..., 1]) / np.where(dd > 0, dd, 1), 0.0)
    t = np.clip(t, 0.0, 1.0)
    ex = qx - t * d[..., 0]
    ey = qy - t * d[..., 1]
    return np.sqrt(ex * ex + ey * ey)


def point_distance(px, py, c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)[..., None, None, :]
    return np.sqrt((px - c[..., 0]) ** 2 + (py - c[..., 1]) ** 2)


def polygon_signed_distance(px, py, vertices) -> np.ndarray:
    """Signed distance to a simple polygon; negative inside.

    ``vertices`` has shape (..., k, 2).
    """
    v = np.asarray(vertices, dtype=np.float64)
    k = v.shape[-2]
    dist = None
    inside = None
    for i in range(k):
        a, b = v[..., i, :], v[..., (i + 1) % k, :]
        d = segment_distance(px, py, a, b)
        dist = d if dist is None else np.minimum(dist, d)
        ax, ay = a[..., 0, None, None], a[..., 1, None, None]
        bx, by = b[..., 0, None, None], b[..., 1, None, None]
        straddles = (ay > py) != (by > py)
        with np.errstate(invalid="ignore", divide="ignore"):
            x_cross = (bx - ax) * (py - ay) / (by - ay) + ax
        crossing = straddles & (px < x_cross)
        inside = crossing if inside is None else inside ^ crossing
    return np.where(inside, -dist, dist)


def stroke_coverage(distance, radius) -> np.ndarray:
    return np.clip(radius + 0.5 - distance, 0.0, 1.0)


def skeleton_coverage(joints_px: np.ndarray, size, region=None) -> np.ndarray:
    """Skeleton stroke coverage in [0, 1] for joints of shape (..., 14, 2) in pixels."""
    H, W = _hw(size)
    scale = W / REFERENCE_SIZE
    px, py = pixel_grid(size, region)
    j = np.asarray(joints_px)
    d = segment_distance(px, py, j[..., BONE_INDEX[:, 0], :], j[..., BONE_INDEX[:, 1], :])
    cov = stroke_coverage(d, SKELETON_STROKE_RADIUS * scale).max(axis=-3)
    head = point_distance(px, py, j[..., JOINT_INDEX["head"], :])
    return np.maximum(cov, stroke_coverage(head, SKELETON_HEAD_RADIUS * scale))


def render_skeleton_image(s: Skeleton, size=64) -> np.ndarray:
    """White anti-aliased skeleton on black, 3 identical channels, values in [0, 1]."""
    cov = skeleton_coverage(to_pixels(s.joints, size), size)
    return np.repeat(cov[..., None], 3, axis=-1)


def part_coverages(joints_px: np.ndarray, a: AppearanceSpec, size, region=None, parts=PAINT_ORDER) -> np.ndarray:
    """Per-part coverage, shape (..., len(parts), h, w); ``parts`` defaults to PAINT_ORDER."""
    H, W = _hw(size)
    scale = W / REFERENCE_SIZE
    radius = a.limb_thickness / 2 * scale
    px, py = pixel_grid(size, region)
    j = np.asarray(joints_px, dtype=np.float64)
    out = []
    for part in parts:
        if part == "torso":
            corners = j[..., [JOINT_INDEX[c] for c in TORSO_CORNERS], :]
            cov = np.clip(0.5 - polygon_signed_distance(px, py, corners), 0.0, 1.0)
        elif part == "head":
            head = j[..., JOINT_INDEX["head"], :]
            neck = j[..., JOINT_INDEX["neck"], :]
            disc_r = HEAD_DISC_FRACTION * a.bone_lengths[0] * W
            cov = np.maximum(
                stroke_coverage(point_distance(px, py, head), disc_r),
                stroke_coverage(segment_distance(px, py, neck, head), radius),
            )
        else:
            p, c = LIMB_SEGMENTS[part]
            d = segment_distance(px, py, j[..., JOINT_INDEX[p], :], j[..., JOINT_INDEX[c], :])
            cov = stroke_coverage(d, radius)
        out.append(cov)
    return np.stack(out, axis=-3)


def _background(background, size, region=None) -> np.ndarray:
    H, W = _hw(size)
    x0, y0, w, h = region if region is not None else (0, 0, W, H)
    if background is None:
        return np.zeros((h, w, 3))
    bg = np.asarray(background, dtype=np.float64)
    if bg.shape == (3,):
        return np.broadcast_to(bg, (h, w, 3)).copy()
    if bg.shape != (H, W, 3):
        raise ValueError(f"background must be an RGB color or shape {(H, W, 3)}, got {bg.shape}")
    return bg[y0 : y0 + h, x0 : x0 + w].copy()


def composite(coverages: np.ndarray, a: AppearanceSpec, background: np.ndarray) -> np.ndarray:
    """Paint parts over ``background`` in PAINT_ORDER.

    ``coverages`` has shape (..., P, h, w); ``background`` (h, w, 3).
    """
    colors = {p: np.asarray(c, dtype=np.float64) for p, c in a.part_colors.items()}
    out = np.broadcast_to(background, coverages.shape[:-3] + background.shape).copy()
    for k, part in enumerate(PAINT_ORDER):
        c = coverages[..., k, :, :, None]
        out = out * (1.0 - c) + colors[part] * c
    return out


def render_person_joints(joints: np.ndarray, a: AppearanceSpec, background=None, size=64, region=None) -> np.ndarray:
    """Batched ``render_person`` over normalized joints of shape (..., 14, 2)."""
    cov = part_coverages(to_pixels(joints, size), a, size, region)
    return composite(cov, a, _background(background, size, region))


def render_person(s: Skeleton, a: AppearanceSpec, background=None, size=64) -> np.ndarray:
    """Stick-figure person: capsule limbs, quad torso, disc head.

    ``background`` is an (H, W, 3) image, an RGB triplet, or None for black.
    """
    return render_person_joints(s.joints, a, background, size)


def draw_skeleton_on_image(x: np.ndarray, s: Skeleton) -> np.ndarray:
    """Set every pixel touched by the skeleton stroke to white.

    Saturating (rather than blending) keeps the operation idempotent.
    """
    x = np.asarray(x, dtype=np.float64)
    cov = skeleton_coverage(to_pixels(s.joints, x.shape[:2]), x.shape[:2])
    return np.where(cov[..., None] > 0, 1.0, x)


def visible_part_masks(s: Skeleton, a: AppearanceSpec, size=64) -> dict[str, np.ndarray]:
    """Pixels fully covered by a part and untouched by any part painted later."""
    cov = part_coverages(to_pixels(s.joints, size), a, size)
    masks = {}
    for k, part in enumerate(PAINT_ORDER):
        later = cov[k + 1 :].max(axis=0) if k + 1 < len(PAINT_ORDER) else 0.0
        masks[part] = (cov[k] >= 1.0) & (later <= 0.0)
    return masks


def gradient_background(top, bottom, size=64) -> np.ndarray:
    H, W = _hw(size)
    t = (np.arange(H, dtype=np.float64) + 0.5)[:, None, None] / H
    row = (1 - t) * np.asarray(top, dtype=np.float64) + t * np.asarray(bottom, dtype=np.float64)
    return np.broadcast_to(row, (H, W, 3)).copy()

