"""Quantitative evaluation of generated sequences.

* pose re-detection by inverting the stick-figure renderer,
* per-part temporal color consistency and color error against the identity,
* accuracy of an action classifier trained on ground-truth sequences.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .models import ModelSpec
from .synthdata import AppearanceSpec, Skeleton, render_person, render_skeleton_image, visible_part_masks
from .synthdata.dataset import DatasetManifest, SequenceSample, load_sequence, save_png
from .synthdata.render import LIMB_SEGMENTS, PAINT_ORDER, TORSO_CORNERS, _background, part_coverages
from .synthdata.skeleton import JOINT_INDEX, JOINT_NAMES, N_JOINTS, REFERENCE_SIZE

log = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 0.1  # mean abs residual per pixel/channel after refit
COARSE_RADIUS = 4
REFINE_STEPS = (1.0, 0.5, 0.25, 0.125)
MAX_SWEEPS = 4


# ------------------------------------------------------------------ refit


@dataclass
class RefitResult:
    skeleton: Skeleton
    joint_errors: np.ndarray  # pixels, vs the reference (conditioning) skeleton
    residual: float
    diverged: bool

    @property
    def mean_error(self) -> float:
        return float(self.joint_errors.mean())


def pose_error(s_fit: Skeleton, s_ref: Skeleton, image_size) -> float:
    """Mean Euclidean joint distance in pixels."""
    return float(joint_distances(s_fit, s_ref, image_size).mean())


def joint_distances(s_fit: Skeleton, s_ref: Skeleton, image_size) -> np.ndarray:
    h, w = (image_size, image_size) if np.isscalar(image_size) else image_size
    d = (s_fit.joints - s_ref.joints) * np.array([w, h], dtype=np.float64)
    return np.sqrt((d**2).sum(axis=1))


def _parts_touching(joint: str) -> list[str]:
    parts = [p for p, ends in LIMB_SEGMENTS.items() if joint in ends]
    if joint in TORSO_CORNERS:
        parts.append("torso")
    if joint in ("head", "neck"):
        parts.append("head")
    return parts


def _part_joints(part: str) -> list[int]:
    if part == "torso":
        names = TORSO_CORNERS
    elif part == "head":
        names = ("head", "neck")
    else:
        names = LIMB_SEGMENTS[part]
    return [JOINT_INDEX[n] for n in names]


_TOUCHING = {j: sorted({i for p in _parts_touching(name) for i in _part_joints(p)}) for j, name in enumerate(JOINT_NAMES)}


def _region(points_px: np.ndarray, margin: float, H: int, W: int):
    lo = np.floor(points_px.min(axis=0) - margin).astype(int)
    hi = np.ceil(points_px.max(axis=0) + margin).astype(int)
    x0, y0 = max(lo[0], 0), max(lo[1], 0)
    x1, y1 = min(hi[0], W), min(hi[1], H)
    if x1 <= x0 or y1 <= y0:
        return None
    return (int(x0), int(y0), int(x1 - x0), int(y1 - y0))


def _render_candidates(cands, J, j, a, bg_full, size, region):
    """Render candidate joint sets that differ from ``J`` only at joint ``j``.

    Parts not attached to ``j`` are rasterized once and shared by all
    candidates; the result equals ``render_person_joints`` on each candidate.
    """
    x0, y0, w, h = region
    moving = set(_parts_touching(JOINT_NAMES[j]))
    mov_parts = [p for p in PAINT_ORDER if p in moving]
    fix_parts = [p for p in PAINT_ORDER if p not in moving]
    cov_m = part_coverages(cands, a, size, region, parts=mov_parts)
    cov_f = part_coverages(J, a, size, region, parts=fix_parts)
    out = bg_full[y0 : y0 + h, x0 : x0 + w]
    batched = False
    for part in PAINT_ORDER:
        color = np.asarray(a.part_colors[part], dtype=np.float64)
        if part in moving:
            c = cov_m[:, mov_parts.index(part), :, :, None]
            batched = True
        else:
            c = cov_f[fix_parts.index(part), :, :, None]
        out = out * (1.0 - c) + color * c
    if not batched:
        out = np.broadcast_to(out, (len(cands),) + out.shape)
    return out


def refit_skeleton(
    frame: np.ndarray,
    appearance_prior: AppearanceSpec,
    init: Skeleton,
    background=None,
    reference: Skeleton | None = None,
    threshold: float = DIVERGENCE_THRESHOLD,
) -> RefitResult:
    """Fit joint positions so the rendered person matches ``frame``.

    Coordinate descent over joints: first every integer offset within +-4 px
    of the current position, then 3x3 neighbourhoods with steps 1, 0.5, 0.25
    and 0.125 px. Each move is scored by the squared pixel discrepancy inside
    the window the move can affect. Errors are measured against
    ``reference`` (default: ``init``).
    """
    frame = np.asarray(frame, dtype=np.float64)
    H, W = frame.shape[:2]
    if frame.min() < 0 or frame.max() > 1:
        raise ValueError("frame values must lie in [0, 1]")
    ref = init if reference is None else reference
    bg_full = _background(background, (H, W))
    scale = np.array([W, H], dtype=np.float64)
    J = init.joints * scale  # pixels
    radius = appearance_prior.limb_thickness / 2 * W / REFERENCE_SIZE
    margin = max(radius, 0.5 * appearance_prior.bone_lengths[0] * W) + 2.0

    def sweep(offsets: np.ndarray) -> bool:
        nonlocal J
        moved = False
        for j in range(N_JOINTS):
            cands = np.repeat(J[None], len(offsets), axis=0)
            cands[:, j] += offsets
            pts = np.concatenate([cands[:, k] for k in _TOUCHING[j]])
            region = _region(pts, margin, H, W)
            if region is None:
                continue
            x0, y0, w, h = region
            imgs = _render_candidates(cands, J, j, appearance_prior, bg_full, (H, W), region)
            target = frame[y0 : y0 + h, x0 : x0 + w]
            cost = ((imgs - target) ** 2).sum(axis=(1, 2, 3))
            best = int(np.argmin(cost))
            if cost[best] < cost[0]:
                J = cands[best]
                moved = True
        return moved

    r = np.arange(-COARSE_RADIUS, COARSE_RADIUS + 1, dtype=np.float64)
    coarse = np.array([(dx, dy) for dx in r for dy in r])
    coarse = coarse[np.argsort(np.abs(coarse).sum(axis=1), kind="stable")]  # zero offset first
    for _ in range(MAX_SWEEPS):
        if not sweep(coarse):
            break
    unit = np.array([(0, 0)] + [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if dx or dy], dtype=np.float64)
    for step in REFINE_STEPS:
        for _ in range(MAX_SWEEPS):
            if not sweep(unit * step):
                break

    joints = np.clip(J / scale, -0.5, 1.5)
    fitted = Skeleton(joints)
    rendered = render_person(fitted, appearance_prior, background, (H, W))
    residual = float(np.abs(rendered - frame).mean())
    return RefitResult(
        skeleton=fitted,
        joint_errors=joint_distances(fitted, ref, (H, W)),
        residual=residual,
        diverged=residual > threshold,
    )


# ------------------------------------------------------------ appearance


@dataclass
class ConsistencyResult:
    value: float
    per_part: dict[str, float]
    n_frames: int
    n_excluded: int

    def __float__(self):
        return self.value


def _part_means(frame: np.ndarray, masks: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {p: frame[m].mean(axis=0) for p, m in masks.items() if m.any()}


def appearance_consistency(frames, part_masks) -> ConsistencyResult:
    """Mean over parts of the temporal (population) std of each part's mean color.

    ``part_masks`` holds one dict part -> boolean mask per frame, or None for
    frames whose refit diverged; those are excluded and counted.
    """
    frames = np.asarray(frames, dtype=np.float64)
    usable = [(f, m) for f, m in zip(frames, part_masks) if m is not None]
    excluded = len(frames) - len(usable)
    if len(usable) < 2:
        raise ValueError(f"insufficient frames for appearance consistency: {len(usable)} usable, need 2")
    series: dict[str, list[np.ndarray]] = {}
    for f, m in usable:
        for p, c in _part_means(f, m).items():
            series.setdefault(p, []).append(c)
    per_part = {p: float(np.std(np.stack(v), axis=0).mean()) for p, v in series.items() if len(v) >= 2}
    if not per_part:
        raise ValueError("insufficient frames for appearance consistency: no part visible twice")
    return ConsistencyResult(float(np.mean(list(per_part.values()))), per_part, len(usable), excluded)


def color_error(frames, part_masks, appearance: AppearanceSpec) -> float:
    """Mean absolute difference between each visible part's mean color and the identity's color."""
    errs = []
    for f, m in zip(np.asarray(frames, dtype=np.float64), part_masks):
        if m is None:
            continue
        for p, c in _part_means(f, m).items():
            errs.append(np.abs(c - np.asarray(appearance.part_colors[p])).mean())
    if not errs:
        return float("nan")
    return float(np.mean(errs))


# ------------------------------------------------------------ classifier


class ActionClassifier(nn.Module):
    """Per-frame conv encoder (discriminator layer plan), temporal mean, linear head."""

    def __init__(self, actions: list[str], spec: ModelSpec, window: int = 8, seed: int = 0):
        super().__init__()
        self.actions = list(actions)
        self.window = window
        self.spec = spec
        layers = []
        c_prev = 3
        for l, c in enumerate(spec.discriminator_channels, start=1):
            layers += [nn.Conv2d(c_prev, c, 4, 2, 1)]
            if l > 1:
                layers.append(nn.BatchNorm2d(c))
            layers.append(nn.LeakyReLU(0.2))
            c_prev = c
        self.encoder = nn.Sequential(*layers)
        self.head = nn.Linear(c_prev, len(self.actions))
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for m in self.encoder.modules():
                if isinstance(m, nn.Conv2d):
                    m.weight.copy_(torch.randn(m.weight.shape, generator=g) * 0.02)
                    m.bias.zero_()
            # zero head keeps training equivariant under relabeling of the classes
            self.head.weight.zero_()
            self.head.bias.zero_()

    def forward(self, clips: torch.Tensor) -> torch.Tensor:
        """clips: (B, T, 3, H, W) normalized -> logits (B, n_actions)."""
        B, T = clips.shape[:2]
        f = self.encoder(clips.reshape(B * T, *clips.shape[2:]))
        f = f.mean(dim=(2, 3)).reshape(B, T, -1).mean(dim=1)
        return self.head(f)

    @torch.no_grad()
    def predict(self, clips: torch.Tensor) -> np.ndarray:
        self.eval()
        return self.forward(clips).argmax(dim=1).numpy()


def _windows(n: int, window: int, stride: int) -> list[int]:
    if n < window:
        return []
    return list(range(0, n - window + 1, stride))


def _clip_tensor(frames: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(2 * np.asarray(frames, dtype=np.float32) - 1)).movedim(-1, -3)


def make_clips(sequences, window: int, stride: int):
    """``sequences``: iterable of (frames (n, H, W, 3) in [0, 1], action)."""
    clips, labels = [], []
    for frames, action in sequences:
        for s in _windows(len(frames), window, stride):
            clips.append(_clip_tensor(frames[s : s + window]))
            labels.append(action)
    return clips, labels


def _augment(clip: torch.Tensor, g: torch.Generator) -> torch.Tensor:
    # color jitter so the classifier keys on shape and motion, not identity colors
    perm = torch.randperm(3, generator=g)
    gain = 0.6 + 0.8 * torch.rand(3, generator=g)
    bias = 0.3 * (torch.rand(3, generator=g) - 0.5)
    x = (clip[:, perm] + 1) / 2 * gain[None, :, None, None] + bias[None, :, None, None]
    return x.clamp(0, 1) * 2 - 1


def train_action_classifier(
    sequences,
    spec: ModelSpec | None = None,
    window: int = 8,
    stride: int = 2,
    epochs: int = 15,
    batch_size: int = 16,
    lr: float = 1e-3,
    seed: int = 0,
    actions: list[str] | None = None,
) -> ActionClassifier:
    """Train on ground-truth (frames, action) pairs."""
    sequences = list(sequences)
    labels_present = sorted({a for _, a in sequences})
    if len(labels_present) < 2:
        raise ValueError(f"need at least 2 actions to train a classifier, got {labels_present}")
    actions = actions or labels_present
    size = sequences[0][0].shape[1]
    spec = spec or ModelSpec(image_size=size, discriminator_depth=4 if size >= 32 else 1)
    clf = ActionClassifier(actions, spec, window, seed)
    clips, labels = make_clips(sequences, window, stride)
    y = torch.tensor([actions.index(a) for a in labels])
    opt = torch.optim.Adam(clf.parameters(), lr=lr)
    g = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        clf.train()
        order = rng.permutation(len(clips))
        for k in range(0, len(order), batch_size):
            idx = order[k : k + batch_size]
            batch = torch.stack([_augment(clips[i], g) for i in idx])
            loss = nn.functional.cross_entropy(clf(batch), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    return clf


@dataclass
class AccuracyTable:
    per_action: dict[str, float]
    overall: float
    counts: dict[str, int]
    confusion: np.ndarray

    def as_dict(self):
        return {"per_action": self.per_action, "overall": self.overall, "counts": self.counts}


def classify_generated(classifier: ActionClassifier, sequences, stride: int | None = None) -> AccuracyTable:
    """Window-level accuracy per action over (frames, action) pairs."""
    stride = stride or max(1, classifier.window // 2)
    clips, labels = make_clips(sequences, classifier.window, stride)
    k = len(classifier.actions)
    confusion = np.zeros((k, k), dtype=int)
    if not clips:
        return AccuracyTable({}, float("nan"), {}, confusion)
    preds = []
    for i in range(0, len(clips), 32):
        preds.extend(classifier.predict(torch.stack(clips[i : i + 32])))
    for a, p in zip(labels, preds):
        confusion[classifier.actions.index(a), int(p)] += 1
    per_action, counts = {}, {}
    for i, a in enumerate(classifier.actions):
        n = int(confusion[i].sum())
        if n:
            per_action[a] = float(confusion[i, i] / n)
            counts[a] = n
    overall = float(np.trace(confusion) / confusion.sum())
    return AccuracyTable(per_action, overall, counts, confusion)


def ground_truth_sequences(manifest: DatasetManifest, split: str):
    return [(load_sequence(manifest, r.seq_id).Y, r.action) for r in manifest.split(split)]


# ------------------------------------------------------------ full report


@dataclass
class SequenceEval:
    seq_id: str
    action: str
    refit_error: float
    consistency: float
    color_error: float
    n_diverged: int


@dataclass
class EvalReport:
    sequences: list[SequenceEval] = field(default_factory=list)
    accuracy: AccuracyTable | None = None
    gt_accuracy: AccuracyTable | None = None
    config: dict = field(default_factory=dict)

    def mean(self, key: str) -> float:
        vals = [getattr(s, key) for s in self.sequences]
        vals = [v for v in vals if np.isfinite(v)]
        return float(np.mean(vals)) if vals else float("nan")

    def to_text(self) -> str:
        lines = ["# skelgen eval report v1"]
        for k, v in sorted(self.config.items()):
            lines.append(f"config {k} {json.dumps(v)}")
        for s in self.sequences:
            lines.append(
                f"sequence {s.seq_id} action {s.action} refit_error {s.refit_error:.6f} "
                f"consistency {s.consistency:.6f} color_error {s.color_error:.6f} diverged {s.n_diverged}"
            )
        for key in ("refit_error", "consistency", "color_error"):
            lines.append(f"mean {key} {self.mean(key):.6f}")
        for tag, table in (("accuracy", self.accuracy), ("gt_accuracy", self.gt_accuracy)):
            if table is None:
                continue
            for a, v in table.per_action.items():
                lines.append(f"{tag} {a} {v:.6f}")
            lines.append(f"{tag} overall {table.overall:.6f}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())


def evaluate_frames(frames: np.ndarray, sample: SequenceSample) -> tuple[list[RefitResult], list]:
    """Refit every frame against the sample's conditioning skeletons."""
    bg = sample.background()
    fits, masks = [], []
    for f, s in zip(frames, sample.S):
        r = refit_skeleton(f, sample.appearance, s, background=bg)
        fits.append(r)
        masks.append(None if r.diverged else visible_part_masks(r.skeleton, sample.appearance, f.shape[0]))
    return fits, masks


def evaluate_sequence(frames: np.ndarray, sample: SequenceSample) -> tuple[SequenceEval, list[RefitResult]]:
    fits, masks = evaluate_frames(frames, sample)
    ok = [r for r in fits if not r.diverged]
    refit = float(np.mean([r.mean_error for r in ok])) if ok else float("nan")
    try:
        cons = appearance_consistency(frames, masks).value
    except ValueError:
        cons = float("nan")
    return (
        SequenceEval(
            seq_id=sample.seq_id,
            action=sample.action,
            refit_error=refit,
            consistency=cons,
            color_error=color_error(frames, masks, sample.appearance),
            n_diverged=len(fits) - len(ok),
        ),
        fits,
    )


def image_grid(sample: SequenceSample, generated: np.ndarray, fits: list[RefitResult] | None = None, max_frames: int = 16) -> np.ndarray:
    """Rows: ground truth, conditioning skeletons, generated frames, refit skeletons."""
    n = min(max_frames, sample.n)
    size = sample.size
    rows = [
        np.concatenate(list(sample.Y[:n]), axis=1),
        np.concatenate([render_skeleton_image(s, size) for s in sample.S[:n]], axis=1),
        np.concatenate(list(generated[:n]), axis=1),
    ]
    if fits is not None:
        rows.append(np.concatenate([render_skeleton_image(r.skeleton, size) for r in fits[:n]], axis=1))
    return np.concatenate(rows, axis=0)


def save_grid(path, grid: np.ndarray) -> None:
    save_png(Path(path), grid)
