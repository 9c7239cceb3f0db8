"""Stick-figure skeletons, identities and procedural motion.

Coordinates are normalized image coordinates: x to the right, y downward,
(0, 0) at the top-left corner and (1, 1) at the bottom-right.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

JOINT_NAMES: tuple[str, ...] = (
    "head",
    "neck",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_wrist",
    "r_wrist",
    "l_hip",
    "r_hip",
    "l_knee",
    "r_knee",
    "l_ankle",
    "r_ankle",
)
JOINT_INDEX = {name: i for i, name in enumerate(JOINT_NAMES)}
N_JOINTS = len(JOINT_NAMES)

# (parent, child) per bone; the tree is rooted at the neck.
BONES: tuple[tuple[str, str], ...] = (
    ("neck", "head"),
    ("neck", "l_shoulder"),
    ("neck", "r_shoulder"),
    ("l_shoulder", "l_elbow"),
    ("r_shoulder", "r_elbow"),
    ("l_elbow", "l_wrist"),
    ("r_elbow", "r_wrist"),
    ("neck", "l_hip"),
    ("neck", "r_hip"),
    ("l_hip", "l_knee"),
    ("r_hip", "r_knee"),
    ("l_knee", "l_ankle"),
    ("r_knee", "r_ankle"),
)
BONE_INDEX = np.array([[JOINT_INDEX[p], JOINT_INDEX[c]] for p, c in BONES])
N_BONES = len(BONES)

BODY_PARTS: tuple[str, ...] = (
    "head",
    "torso",
    "upper_arm_l",
    "upper_arm_r",
    "lower_arm_l",
    "lower_arm_r",
    "upper_leg_l",
    "upper_leg_r",
    "lower_leg_l",
    "lower_leg_r",
)

# Reference bone lengths (normalized units), in BONES order.
DEFAULT_BONE_LENGTHS = np.array(
    [0.11, 0.085, 0.085, 0.13, 0.13, 0.12, 0.12, 0.27, 0.27, 0.19, 0.19, 0.19, 0.19]
)

# Resolution at which AppearanceSpec.limb_thickness is expressed.
REFERENCE_SIZE = 64

NECK_Y = 0.25
COORD_MIN, COORD_MAX = -0.5, 1.5


@dataclass
class Skeleton:
    """Fourteen named 2D joints in ``JOINT_NAMES`` order."""

    joints: np.ndarray

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.joints.shape != (N_JOINTS, 2):
            raise ValueError(
                f"skeleton needs shape ({N_JOINTS}, 2), got {self.joints.shape}"
            )
        if not np.all(np.isfinite(self.joints)):
            raise ValueError("skeleton coordinates must be finite")
        if self.joints.min() < COORD_MIN or self.joints.max() > COORD_MAX:
            raise ValueError(
                f"skeleton coordinates must lie in [{COORD_MIN}, {COORD_MAX}]"
            )

    def __getitem__(self, name: str) -> np.ndarray:
        return self.joints[JOINT_INDEX[name]]

    def bone_lengths(self) -> np.ndarray:
        return bone_lengths(self.joints)

    def translated(self, dx: float, dy: float = 0.0) -> "Skeleton":
        return Skeleton(self.joints + np.array([dx, dy]))


def bone_lengths(joints: np.ndarray) -> np.ndarray:
    """Bone lengths for joints of shape (..., 14, 2)."""
    j = np.asarray(joints)
    d = j[..., BONE_INDEX[:, 1], :] - j[..., BONE_INDEX[:, 0], :]
    return np.linalg.norm(d, axis=-1)


@dataclass
class AppearanceSpec:
    identity_id: int
    part_colors: dict[str, tuple[float, float, float]]
    limb_thickness: float = 5.0
    bone_lengths: np.ndarray = field(default_factory=lambda: DEFAULT_BONE_LENGTHS.copy())

    def __post_init__(self):
        self.bone_lengths = np.asarray(self.bone_lengths, dtype=np.float64)
        missing = set(BODY_PARTS) - set(self.part_colors)
        if missing:
            raise ValueError(f"part_colors missing {sorted(missing)}")
        for part, rgb in self.part_colors.items():
            if part not in BODY_PARTS:
                raise ValueError(f"unknown body part {part!r}")
            if len(rgb) != 3 or min(rgb) < 0 or max(rgb) > 1:
                raise ValueError(f"color of {part!r} must be an RGB triplet in [0, 1]")
        if self.limb_thickness < 1:
            raise ValueError("limb_thickness must be >= 1 pixel")
        if self.bone_lengths.shape != (N_BONES,) or np.any(self.bone_lengths <= 0):
            raise ValueError(f"bone_lengths must be {N_BONES} positive values")

    def color_array(self) -> np.ndarray:
        """Colors as an array of shape (len(BODY_PARTS), 3)."""
        return np.array([self.part_colors[p] for p in BODY_PARTS], dtype=np.float64)


class Action(str, Enum):
    WALKING = "walking"
    RUNNING = "running"
    HANDWAVING = "handwaving"


ACTIONS: tuple[str, ...] = tuple(a.value for a in Action)


@dataclass
class MotionParams:
    action: Action | str
    frequency: float
    amplitude: float
    phase: float = 0.0
    translation_speed: float = 0.0

    def __post_init__(self):
        try:
            self.action = Action(self.action)
        except ValueError:
            raise ValueError(
                f"unknown action {self.action!r}; expected one of {list(ACTIONS)}"
            ) from None
        if not self.frequency > 0:
            raise ValueError("frequency must be > 0")
        if not 0 < self.amplitude <= math.pi / 2:
            raise ValueError("amplitude must lie in (0, pi/2]")


def _direction(angle: np.ndarray) -> np.ndarray:
    # angle 0 points down the image, positive angles rotate towards +x
    return np.stack([np.sin(angle), np.cos(angle)], axis=-1)


def _pose_from_angles(root: np.ndarray, angles: dict[str, np.ndarray], bones: np.ndarray) -> np.ndarray:
    """Forward kinematics. ``angles`` maps child joint -> absolute bone angle."""
    n = root.shape[0]
    joints = np.zeros((n, N_JOINTS, 2))
    joints[:, JOINT_INDEX["neck"]] = root
    for b, (parent, child) in enumerate(BONES):
        joints[:, JOINT_INDEX[child]] = (
            joints[:, JOINT_INDEX[parent]] + bones[b] * _direction(angles[child])
        )
    return joints


HIP_SPLAY = 0.2


def _joint_angles(params: MotionParams, t: np.ndarray) -> dict[str, np.ndarray]:
    a = params.amplitude
    p = 2 * math.pi * params.frequency * t + params.phase
    zero = np.zeros_like(t, dtype=np.float64)
    thigh_l = thigh_r = zero
    knee_l = knee_r = zero
    arm_l = arm_r = zero
    elbow_l = elbow_r = zero

    if params.action is Action.WALKING:
        thigh_l, thigh_r = a * np.sin(p), -a * np.sin(p)
        knee_l = 0.6 * a * (1 + np.sin(p + math.pi / 2)) / 2
        knee_r = 0.6 * a * (1 - np.sin(p + math.pi / 2)) / 2
        arm_l, arm_r = -0.5 * a * np.sin(p), 0.5 * a * np.sin(p)
        elbow_l = elbow_r = 0.3 * a + zero
    elif params.action is Action.RUNNING:
        thigh_l, thigh_r = a * np.sin(p), -a * np.sin(p)
        knee_l = 1.2 * a * (1 + np.sin(p + math.pi / 2)) / 2
        knee_r = 1.2 * a * (1 - np.sin(p + math.pi / 2)) / 2
        arm_l, arm_r = -0.9 * a * np.sin(p), 0.9 * a * np.sin(p)
        elbow_l = elbow_r = 1.6 * a + zero
    else:  # handwaving: arms sweep from the sides to overhead
        raise_ = a * (1 - np.cos(p))
        arm_l, arm_r = -raise_, raise_
        elbow_l, elbow_r = -0.25 * raise_, 0.25 * raise_

    return {
        "head": math.pi + zero,
        "l_shoulder": -math.pi / 2 + zero,
        "r_shoulder": math.pi / 2 + zero,
        "l_elbow": arm_l,
        "r_elbow": arm_r,
        # forearms flex forward (+x) relative to the upper arm
        "l_wrist": arm_l + elbow_l,
        "r_wrist": arm_r + elbow_r,
        "l_hip": -HIP_SPLAY + zero,
        "r_hip": HIP_SPLAY + zero,
        "l_knee": thigh_l,
        "r_knee": thigh_r,
        # shins fold backward (-x) relative to the thigh
        "l_ankle": thigh_l - knee_l,
        "r_ankle": thigh_r - knee_r,
    }


def canonical_pose(bones: np.ndarray = DEFAULT_BONE_LENGTHS, root_x: float = 0.5) -> Skeleton:
    """Standing pose: arms and legs straight down."""
    zero = np.zeros(1)
    angles = {
        "head": math.pi + zero,
        "l_shoulder": -math.pi / 2 + zero,
        "r_shoulder": math.pi / 2 + zero,
        "l_elbow": zero,
        "r_elbow": zero,
        "l_wrist": zero,
        "r_wrist": zero,
        "l_hip": -HIP_SPLAY + zero,
        "r_hip": HIP_SPLAY + zero,
        "l_knee": zero,
        "r_knee": zero,
        "l_ankle": zero,
        "r_ankle": zero,
    }
    root = np.array([[root_x, NECK_Y]])
    return Skeleton(_pose_from_angles(root, angles, np.asarray(bones))[0])


def synth_skeleton_sequence(
    params: MotionParams,
    bones: np.ndarray = DEFAULT_BONE_LENGTHS,
    n: int = 32,
    seed: int = 0,
) -> list[Skeleton]:
    """Procedural skeleton sequence for one action.

    Limb angles oscillate sinusoidally with ``params.frequency`` cycles per
    frame. The root (neck) moves ``translation_speed`` per frame along +x; the
    trajectory is centred in the frame, with a small seeded horizontal offset.
    The seed has no other effect.
    """
    if not isinstance(params, MotionParams):
        raise TypeError("params must be MotionParams")
    if n < 1:
        raise ValueError(f"sequence length must be >= 1, got {n}")
    bones = np.asarray(bones, dtype=np.float64)
    if bones.shape != (N_BONES,) or np.any(bones <= 0):
        raise ValueError(f"bones must be {N_BONES} positive lengths")

    rng = np.random.default_rng(seed)
    offset = rng.uniform(-0.04, 0.04)
    t = np.arange(n, dtype=np.float64)
    x0 = 0.5 + offset - params.translation_speed * (n - 1) / 2
    root = np.stack([x0 + params.translation_speed * t, np.full(n, NECK_Y)], axis=-1)
    joints = _pose_from_angles(root, _joint_angles(params, t), bones)
    return [Skeleton(j) for j in joints]


def stack_joints(skeletons: list[Skeleton]) -> np.ndarray:
    return np.stack([s.joints for s in skeletons])


# Per-action sampling ranges used when building datasets.
_MOTION_RANGES = {
    Action.WALKING: dict(period=(10.0, 14.0), amplitude=(0.45, 0.6), speed=(0.008, 0.012)),
    Action.RUNNING: dict(period=(7.0, 9.0), amplitude=(0.8, 0.95), speed=(0.016, 0.02)),
    Action.HANDWAVING: dict(period=(8.0, 12.0), amplitude=(1.2, 1.5), speed=(0.0, 0.0)),
}


def random_motion(action: Action | str, rng: np.random.Generator) -> MotionParams:
    r = _MOTION_RANGES[Action(action)]
    return MotionParams(
        action=action,
        frequency=1.0 / rng.uniform(*r["period"]),
        amplitude=rng.uniform(*r["amplitude"]),
        phase=rng.uniform(0, 2 * math.pi),
        translation_speed=rng.uniform(*r["speed"]),
    )


def random_appearance(identity_id: int, rng: np.random.Generator) -> AppearanceSpec:
    """Random identity built from five color groups (shirt, sleeves, skin,
    trousers, boots), resampled until every pair differs by at least 0.3 in
    Euclidean RGB distance; left/right parts get small independent jitter."""
    while True:
        groups = rng.uniform(0.25, 0.95, size=(5, 3))
        d = np.linalg.norm(groups[:, None] - groups[None], axis=-1)
        if d[np.triu_indices(5, 1)].min() >= 0.3:
            break
    shirt, sleeve, skin, trousers, boots = groups

    def jitter(c):
        c = np.clip(c + rng.uniform(-0.05, 0.05, size=3), 0.2, 0.95)
        return tuple(round(float(v), 6) for v in c)

    colors = {
        "head": jitter(skin),
        "torso": jitter(shirt),
        "upper_arm_l": jitter(sleeve),
        "upper_arm_r": jitter(sleeve),
        "lower_arm_l": jitter(skin),
        "lower_arm_r": jitter(skin),
        "upper_leg_l": jitter(trousers),
        "upper_leg_r": jitter(trousers),
        "lower_leg_l": jitter(boots),
        "lower_leg_r": jitter(boots),
    }
    scale = rng.uniform(0.92, 1.05)
    bones = DEFAULT_BONE_LENGTHS * scale * rng.uniform(0.96, 1.04, size=N_BONES)
    # keep the figure left/right symmetric
    for a, b in ((1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12)):
        bones[b] = bones[a]
    return AppearanceSpec(
        identity_id=identity_id,
        part_colors=colors,
        limb_thickness=round(float(rng.uniform(4.0, 6.0)), 6),
        bone_lengths=np.round(bones, 6),
    )
