"""On-disk synthetic motion datasets.

Layout under a dataset root::

    manifest.txt
    <seq_id>/reference.png
    <seq_id>/frame_0000.png ...
    <seq_id>/skeleton.txt      one line per frame: 14 "name x y" triples
    <seq_id>/meta.txt          "key value..." lines

All text is plain ASCII with one record per line so datasets diff cleanly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .render import gradient_background, render_person
from .skeleton import (
    ACTIONS,
    BODY_PARTS,
    JOINT_NAMES,
    N_JOINTS,
    AppearanceSpec,
    MotionParams,
    Skeleton,
    canonical_pose,
    random_appearance,
    random_motion,
    synth_skeleton_sequence,
)

MANIFEST_NAME = "manifest.txt"
MANIFEST_HEADER = "# skelgen dataset manifest v1"
TRAIN_FRACTION = 0.8
MIN_FRAMES = 8


class DatasetFormatError(ValueError):
    """A dataset file could not be parsed."""


@dataclass
class SequenceSample:
    seq_id: str
    x: np.ndarray  # reference image (H, W, 3) in [0, 1]
    S: list[Skeleton]
    Y: np.ndarray  # frames (n, H, W, 3) in [0, 1]
    identity_id: int
    action: str
    appearance: AppearanceSpec
    background_top: tuple[float, float, float] = (0.0, 0.0, 0.0)
    background_bottom: tuple[float, float, float] = (0.0, 0.0, 0.0)
    motion: MotionParams | None = None
    seed: int = 0

    def __post_init__(self):
        if not (len(self.S) == len(self.Y)):
            raise ValueError(f"|S|={len(self.S)} but |Y|={len(self.Y)}")

    @property
    def n(self) -> int:
        return len(self.S)

    @property
    def size(self) -> int:
        return self.x.shape[0]

    def background(self) -> np.ndarray:
        return make_background(self.background_top, self.background_bottom, self.x.shape[:2])

    def joints(self) -> np.ndarray:
        return np.stack([s.joints for s in self.S])


@dataclass
class SequenceRecord:
    seq_id: str
    action: str
    identity: int
    n: int
    split: str

    def files(self, root: Path) -> dict[str, Path]:
        d = Path(root) / self.seq_id
        out = {
            "reference": d / "reference.png",
            "skeleton": d / "skeleton.txt",
            "meta": d / "meta.txt",
        }
        for t in range(self.n):
            out[f"frame_{t:04d}"] = d / f"frame_{t:04d}.png"
        return out


@dataclass
class DatasetManifest:
    root: Path
    records: list[SequenceRecord]
    seed: int
    size: int
    n_frames: int
    background: str = "flat"
    extra: dict[str, str] = field(default_factory=dict)

    def split(self, tag: str) -> list[SequenceRecord]:
        return [r for r in self.records if r.split == tag]

    def record(self, seq_id: str) -> SequenceRecord:
        for r in self.records:
            if r.seq_id == seq_id:
                return r
        raise KeyError(f"sequence {seq_id!r} not in manifest {self.root}")

    @property
    def actions(self) -> list[str]:
        return sorted({r.action for r in self.records}, key=ACTIONS.index)

    def identities(self, tag: str | None = None) -> set[int]:
        recs = self.records if tag is None else self.split(tag)
        return {r.identity for r in recs}


def make_background(top, bottom, size) -> np.ndarray:
    h, w = size if not isinstance(size, int) else (size, size)
    top = np.asarray(top, dtype=np.float64)
    bottom = np.asarray(bottom, dtype=np.float64)
    if np.array_equal(top, bottom):
        return np.broadcast_to(top, (h, w, 3)).copy()
    return gradient_background(top, bottom, (h, w))


# ---------------------------------------------------------------- image I/O


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path: Path, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def load_png(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing image file {path}")
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


# ------------------------------------------------------------- text records


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def format_skeleton_line(s: Skeleton) -> str:
    return " ".join(f"{name} {_fmt(x)} {_fmt(y)}" for name, (x, y) in zip(JOINT_NAMES, s.joints))


def parse_skeleton_line(line: str, where: str = "") -> Skeleton:
    tok = line.split()
    if len(tok) != 3 * N_JOINTS:
        raise DatasetFormatError(f"{where}: expected {3 * N_JOINTS} fields, got {len(tok)}")
    joints = np.zeros((N_JOINTS, 2))
    for i, name in enumerate(JOINT_NAMES):
        got = tok[3 * i]
        if got != name:
            raise DatasetFormatError(f"{where}: field {i} should be joint {name!r}, got {got!r}")
        try:
            joints[i] = float(tok[3 * i + 1]), float(tok[3 * i + 2])
        except ValueError:
            raise DatasetFormatError(
                f"{where}: joint {name!r} has non-numeric coordinates "
                f"{tok[3 * i + 1]!r} {tok[3 * i + 2]!r}"
            ) from None
    try:
        return Skeleton(joints)
    except ValueError as e:
        raise DatasetFormatError(f"{where}: {e}") from None


def quantize_skeleton(s: Skeleton) -> Skeleton:
    """Round through the on-disk text representation."""
    return parse_skeleton_line(format_skeleton_line(s))


def write_skeletons(path: Path, skeletons: list[Skeleton]) -> None:
    with open(path, "w", newline="\n") as f:
        for s in skeletons:
            f.write(format_skeleton_line(s) + "\n")


def read_skeletons(path: Path) -> list[Skeleton]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing skeleton file {path}")
    lines = path.read_text().splitlines()
    return [parse_skeleton_line(line, f"{path}:{i + 1}") for i, line in enumerate(lines) if line.strip()]


def _meta_lines(sample: SequenceSample) -> list[str]:
    a = sample.appearance
    lines = [
        f"action {sample.action}",
        f"identity {sample.identity_id}",
        f"n {sample.n}",
        f"seed {sample.seed}",
        f"size {sample.size}",
    ]
    if sample.motion is not None:
        m = sample.motion
        lines += [
            f"frequency {m.frequency!r}",
            f"amplitude {m.amplitude!r}",
            f"phase {m.phase!r}",
            f"translation_speed {m.translation_speed!r}",
        ]
    lines.append(f"limb_thickness {_fmt(a.limb_thickness)}")
    lines.append("bone_lengths " + " ".join(_fmt(v) for v in a.bone_lengths))
    for part in BODY_PARTS:
        lines.append(f"color_{part} " + " ".join(_fmt(v) for v in a.part_colors[part]))
    lines.append("background_top " + " ".join(_fmt(v) for v in sample.background_top))
    lines.append("background_bottom " + " ".join(_fmt(v) for v in sample.background_bottom))
    return lines


def _read_meta(path: Path) -> dict[str, list[str]]:
    if not Path(path).exists():
        raise FileNotFoundError(f"missing meta file {path}")
    meta = {}
    for i, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        key, *vals = line.split()
        meta[key] = vals
    return meta


def _meta_get(meta, key, path, n=None, conv=float):
    if key not in meta:
        raise DatasetFormatError(f"{path}: missing field {key!r}")
    vals = meta[key]
    if n is not None and len(vals) != n:
        raise DatasetFormatError(f"{path}: field {key!r} needs {n} values, got {len(vals)}")
    try:
        out = [conv(v) for v in vals]
    except ValueError:
        raise DatasetFormatError(f"{path}: field {key!r} has malformed value {' '.join(vals)!r}") from None
    return out if n != 1 else out[0]


# -------------------------------------------------------------- sequences


def save_sequence(sample: SequenceSample, root: Path) -> Path:
    d = Path(root) / sample.seq_id
    d.mkdir(parents=True, exist_ok=True)
    save_png(d / "reference.png", sample.x)
    for t, y in enumerate(sample.Y):
        save_png(d / f"frame_{t:04d}.png", y)
    write_skeletons(d / "skeleton.txt", sample.S)
    (d / "meta.txt").write_text("\n".join(_meta_lines(sample)) + "\n")
    return d


def load_sequence(manifest: DatasetManifest | Path | str, seq_id: str) -> SequenceSample:
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)
    rec = manifest.record(seq_id)
    files = rec.files(manifest.root)
    meta_path = files["meta"]
    meta = _read_meta(meta_path)
    colors = {p: tuple(_meta_get(meta, f"color_{p}", meta_path, 3)) for p in BODY_PARTS}
    appearance = AppearanceSpec(
        identity_id=_meta_get(meta, "identity", meta_path, 1, int),
        part_colors=colors,
        limb_thickness=_meta_get(meta, "limb_thickness", meta_path, 1),
        bone_lengths=np.array(_meta_get(meta, "bone_lengths", meta_path)),
    )
    motion = None
    if "frequency" in meta:
        motion = MotionParams(
            action=_meta_get(meta, "action", meta_path, 1, str),
            frequency=_meta_get(meta, "frequency", meta_path, 1),
            amplitude=_meta_get(meta, "amplitude", meta_path, 1),
            phase=_meta_get(meta, "phase", meta_path, 1),
            translation_speed=_meta_get(meta, "translation_speed", meta_path, 1),
        )
    S = read_skeletons(files["skeleton"])
    if len(S) != rec.n:
        raise DatasetFormatError(f"{files['skeleton']}: expected {rec.n} frames, found {len(S)}")
    Y = np.stack([load_png(files[f"frame_{t:04d}"]) for t in range(rec.n)])
    return SequenceSample(
        seq_id=seq_id,
        x=load_png(files["reference"]),
        S=S,
        Y=Y,
        identity_id=appearance.identity_id,
        action=_meta_get(meta, "action", meta_path, 1, str),
        appearance=appearance,
        background_top=tuple(_meta_get(meta, "background_top", meta_path, 3)),
        background_bottom=tuple(_meta_get(meta, "background_bottom", meta_path, 3)),
        motion=motion,
        seed=_meta_get(meta, "seed", meta_path, 1, int),
    )


# --------------------------------------------------------------- manifests


def write_manifest(manifest: DatasetManifest) -> Path:
    lines = [
        MANIFEST_HEADER,
        f"seed {manifest.seed}",
        f"size {manifest.size}",
        f"frames {manifest.n_frames}",
        f"background {manifest.background}",
    ]
    lines += [f"{k} {v}" for k, v in sorted(manifest.extra.items())]
    for r in manifest.records:
        lines.append(f"sequence {r.seq_id} {r.action} {r.identity} {r.n} {r.split}")
    path = Path(manifest.root) / MANIFEST_NAME
    path.write_text("\n".join(lines) + "\n")
    return path


def load_manifest(root: Path | str) -> DatasetManifest:
    root = Path(root)
    path = root / MANIFEST_NAME if root.is_dir() else root
    root = path.parent
    if not path.exists():
        raise FileNotFoundError(f"missing manifest {path}")
    header = {}
    records = []
    for i, line in enumerate(path.read_text().splitlines()):
        if not line.strip() or line.startswith("#"):
            continue
        key, *vals = line.split()
        if key == "sequence":
            if len(vals) != 5:
                raise DatasetFormatError(f"{path}:{i + 1}: sequence record needs 5 fields")
            seq_id, action, ident, n, split = vals
            records.append(SequenceRecord(seq_id, action, int(ident), int(n), split))
        else:
            header[key] = " ".join(vals)
    return DatasetManifest(
        root=root,
        records=records,
        seed=int(header.pop("seed", 0)),
        size=int(header.pop("size", 64)),
        n_frames=int(header.pop("frames", 0)),
        background=header.pop("background", "flat"),
        extra=header,
    )


def split_identities(n_identities: int, seed: int) -> tuple[list[int], list[int]]:
    """Identity-disjoint train/test split with an 80/20 ratio."""
    if n_identities < 2:
        raise ValueError(f"need at least 2 identities for a train/test split, got {n_identities}")
    n_test = max(1, int(round((1 - TRAIN_FRACTION) * n_identities)))
    perm = np.random.default_rng([seed, 1]).permutation(n_identities)
    test = sorted(int(i) for i in perm[:n_test])
    train = sorted(int(i) for i in perm[n_test:])
    return train, test


def _background_colors(kind: str, rng: np.random.Generator):
    if kind == "black":
        return (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)
    top = tuple(round(float(v), 6) for v in rng.uniform(0.0, 0.18, size=3))
    if kind == "flat":
        return top, top
    if kind == "gradient":
        bottom = tuple(round(float(v), 6) for v in rng.uniform(0.0, 0.18, size=3))
        return top, bottom
    raise ValueError(f"unknown background kind {kind!r}; expected flat, gradient or black")


def make_sequence(
    identity: int,
    action: str,
    n_frames: int,
    size: int,
    seed: int,
    background: str = "flat",
) -> SequenceSample:
    """One synthetic sequence, a pure function of its arguments."""
    if n_frames < MIN_FRAMES:
        raise ValueError(f"sequences need at least {MIN_FRAMES} frames, got {n_frames}")
    appearance = random_appearance(identity, np.random.default_rng([seed, 2, identity]))
    top, bottom = _background_colors(background, np.random.default_rng([seed, 3, identity]))
    bg = make_background(top, bottom, size)
    action_idx = ACTIONS.index(action)
    rng = np.random.default_rng([seed, 4, identity, action_idx])
    motion = random_motion(action, rng)
    S = synth_skeleton_sequence(motion, appearance.bone_lengths, n_frames, seed=int(rng.integers(2**31)))
    S = [quantize_skeleton(s) for s in S]
    Y = np.stack([render_person(s, appearance, bg, size) for s in S])
    ref = quantize_skeleton(canonical_pose(appearance.bone_lengths, root_x=0.5))
    x = render_person(ref, appearance, bg, size)
    return SequenceSample(
        seq_id=f"id{identity:03d}_{action}",
        x=x,
        S=S,
        Y=Y,
        identity_id=identity,
        action=action,
        appearance=appearance,
        background_top=top,
        background_bottom=bottom,
        motion=motion,
        seed=seed,
    )


def build_dataset(
    n_identities: int,
    actions=ACTIONS,
    n_frames: int = 32,
    size: int = 64,
    seed: int = 0,
    out_dir: Path | str = "data",
    background: str = "flat",
) -> DatasetManifest:
    actions = list(actions)
    for a in actions:
        if a not in ACTIONS:
            raise ValueError(f"unknown action {a!r}; expected one of {list(ACTIONS)}")
    train_ids, test_ids = split_identities(n_identities, seed)
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if not os.access(out_dir, os.W_OK):
            raise PermissionError("not writable")
    except OSError as e:
        raise OSError(f"cannot write dataset to {out_dir}: {e}") from e

    records = []
    for identity in range(n_identities):
        split = "test" if identity in test_ids else "train"
        for action in actions:
            sample = make_sequence(identity, action, n_frames, size, seed, background)
            save_sequence(sample, out_dir)
            records.append(SequenceRecord(sample.seq_id, action, identity, n_frames, split))
    manifest = DatasetManifest(
        root=out_dir, records=records, seed=seed, size=size, n_frames=n_frames, background=background
    )
    write_manifest(manifest)
    return manifest
