"""Alternating adversarial training: one discriminator update, then one generator update."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .losses import LossWeights, cgan_loss, l1_loss, sample_triplets, total_generator_loss, triplet_loss
from .models import (
    ModelSpec,
    PatchDiscriminator,
    UNetGenerator,
    build_discriminator,
    build_generator,
    load_checkpoint,
    save_checkpoint,
    _load_prefixed,
)
from .synthdata import DatasetManifest, Skeleton, load_manifest, load_sequence, render_skeleton_image

log = logging.getLogger(__name__)

METRIC_NAMES = ("loss_d", "loss_g_adv", "loss_l1", "loss_tri")


@dataclass
class TrainConfig:
    learning_rate: float = 0.0002
    batch_size: int = 10
    epochs: int = 5
    steps: int = 0  # if > 0, overrides epochs
    beta1: float = 0.5
    beta2: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    spec: ModelSpec = field(default_factory=ModelSpec)
    seed: int = 0
    pos_offset: int = 1
    neg_offset: int = 5
    triplets_per_sequence: int = 1
    checkpoint_path: Path | None = None
    metrics_path: Path | None = None
    checkpoint_every: int = 0  # steps; 0 = only at the end
    dropout_at_generation: bool = True
    mix_sequences: bool = False  # draw a batch's random frames from all sequences

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0 or self.steps < 0:
            raise ValueError("epochs and steps must be >= 0")

    @property
    def group_length(self) -> int:
        return self.neg_offset + 1


# ------------------------------------------------------------- normalization


def normalize_image(img):
    """Map values in [0, 1] to [-1, 1]."""
    lo, hi = float(img.min()), float(img.max())
    if lo < 0 or hi > 1:
        raise ValueError(f"image values must lie in [0, 1], got range [{lo}, {hi}]")
    return 2 * img - 1


def denormalize_image(img):
    return (img + 1) / 2


def to_tensor(img: np.ndarray) -> torch.Tensor:
    """(..., H, W, 3) in [0, 1] -> normalized (..., 3, H, W) float32 tensor."""
    t = torch.from_numpy(np.ascontiguousarray(normalize_image(np.asarray(img, dtype=np.float32))))
    return t.movedim(-1, -3).contiguous()


def to_image(t: torch.Tensor) -> np.ndarray:
    """Normalized (..., 3, H, W) tensor -> (..., H, W, 3) array in [0, 1]."""
    return np.clip(denormalize_image(t.detach().movedim(-3, -1).cpu().numpy().astype(np.float64)), 0, 1)


def skeleton_tensor(S: list[Skeleton], size: int) -> torch.Tensor:
    return to_tensor(np.stack([render_skeleton_image(s, size) for s in S]))


# ------------------------------------------------------------------- data


class FrameBank:
    """All frames of a set of sequences, as normalized tensors."""

    def __init__(self, samples):
        if not samples:
            raise ValueError("no training sequences")
        self.samples = samples
        self.x = torch.stack([to_tensor(s.x) for s in samples])
        self.s = [skeleton_tensor(s.S, s.size) for s in samples]
        self.y = [to_tensor(s.Y) for s in samples]
        self.index = [(i, t) for i, s in enumerate(samples) for t in range(s.n)]

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, split: str = "train", ids=None):
        recs = manifest.split(split) if ids is None else [manifest.record(i) for i in ids]
        return cls([load_sequence(manifest, r.seq_id) for r in recs])

    def __len__(self):
        return len(self.index)

    def gather(self, pairs):
        x = torch.stack([self.x[i] for i, _ in pairs])
        s = torch.stack([self.s[i][t] for i, t in pairs])
        y = torch.stack([self.y[i][t] for i, t in pairs])
        return x, s, y


@dataclass
class Batch:
    x: torch.Tensor
    s: torch.Tensor
    y: torch.Tensor
    group: slice | None = None  # consecutive frames of one sequence, for triplets
    dropout_seed: int = 0
    triplet_seed: int = 0


def make_batch(bank: FrameBank, cfg: TrainConfig, step: int) -> Batch:
    """``batch_size`` random frames plus one run of consecutive frames.

    By default every frame of a batch comes from one sequence, so batch
    statistics during training see one reference image, as they do when a
    whole sequence is generated. The consecutive run is included whatever the
    triplet weight, so loss ablations see identical data streams.
    """
    rng = np.random.default_rng([cfg.seed, 101, step])
    L = cfg.group_length
    eligible = [i for i, s in enumerate(bank.samples) if s.n >= L] or list(range(len(bank.samples)))
    i = eligible[int(rng.integers(len(eligible)))]
    if cfg.mix_sequences:
        pool = bank.index
    else:
        pool = [(i, t) for t in range(bank.samples[i].n)]
    picks = rng.choice(len(pool), size=cfg.batch_size, replace=len(pool) < cfg.batch_size)
    pairs = [pool[int(k)] for k in picks]
    group = None
    if bank.samples[i].n >= L:
        start = int(rng.integers(bank.samples[i].n - L + 1))
        group = slice(len(pairs), len(pairs) + L)
        pairs += [(i, start + k) for k in range(L)]
    x, s, y = bank.gather(pairs)
    return Batch(x, s, y, group, dropout_seed=int(rng.integers(2**31)), triplet_seed=int(rng.integers(2**31)))


# ------------------------------------------------------------------ state


@dataclass
class TrainState:
    G: UNetGenerator
    D: PatchDiscriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    config: TrainConfig
    step: int = 0
    epoch: int = 0
    history: list[dict] = field(default_factory=list)


def init_state(cfg: TrainConfig) -> TrainState:
    torch.manual_seed(cfg.seed)
    G = build_generator(cfg.spec, seed=cfg.seed)
    D = build_discriminator(cfg.spec, seed=cfg.seed + 1)
    betas = (cfg.beta1, cfg.beta2)
    opt_g = torch.optim.Adam(G.parameters(), lr=cfg.learning_rate, betas=betas)
    opt_d = torch.optim.Adam(D.parameters(), lr=cfg.learning_rate, betas=betas)
    return TrainState(G, D, opt_g, opt_d, cfg)


def _set_requires_grad(module: torch.nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


def compute_triplet_term(fake: torch.Tensor, batch: Batch, cfg: TrainConfig) -> torch.Tensor:
    if batch.group is None:
        return fake.new_zeros(())
    frames = fake[batch.group]
    n = frames.shape[0]
    m = min(cfg.triplets_per_sequence, n - cfg.neg_offset)
    T = sample_triplets(n, m, cfg.pos_offset, cfg.neg_offset, seed=batch.triplet_seed)
    return triplet_loss(frames, T, cfg.weights.alpha)


def generator_losses(G, D, batch: Batch, cfg: TrainConfig, fake=None, dropout=True):
    """(total, adv, l1, tri) generator losses for one batch."""
    if fake is None:
        fake = G(batch.x, batch.s, dropout=dropout, seeds=batch.dropout_seed)
    _, fake_score = D(batch.x, batch.s, fake)
    adv = -torch.log(fake_score.clamp(1e-7, 1 - 1e-7)).mean()
    l1 = l1_loss(batch.y, fake)
    tri = compute_triplet_term(fake, batch, cfg)
    return total_generator_loss(adv, l1, tri, cfg.weights), adv, l1, tri


def discriminator_loss(D, batch: Batch, fake: torch.Tensor) -> torch.Tensor:
    _, real_score = D(batch.x, batch.s, batch.y)
    _, fake_score = D(batch.x, batch.s, fake.detach())
    loss_d, _ = cgan_loss(real_score, fake_score)
    return loss_d


def train_step(state: TrainState, batch: Batch) -> dict:
    cfg = state.config
    G, D = state.G, state.D
    G.train()
    D.train()

    fake = G(batch.x, batch.s, dropout=True, seeds=batch.dropout_seed)
    if not torch.all(torch.isfinite(fake)):
        raise FloatingPointError(f"non-finite generator output at step {state.step}")

    # discriminator update, against the generator's current (pre-update) output
    _set_requires_grad(D, True)
    state.opt_d.zero_grad(set_to_none=True)
    loss_d = discriminator_loss(D, batch, fake)
    if not torch.isfinite(loss_d):
        raise FloatingPointError(f"non-finite loss_d ({float(loss_d)}) at step {state.step}")
    loss_d.backward()
    state.opt_d.step()

    # generator update; D is frozen so no gradient reaches its parameters
    _set_requires_grad(D, False)
    state.opt_g.zero_grad(set_to_none=True)
    total, adv, l1, tri = generator_losses(G, D, batch, cfg, fake=fake)
    total.backward()
    state.opt_g.step()
    _set_requires_grad(D, True)

    metrics = {
        "step": state.step,
        "epoch": state.epoch,
        "loss_d": float(loss_d.detach()),
        "loss_g_adv": float(adv.detach()),
        "loss_l1": float(l1.detach()),
        "loss_tri": float(torch.as_tensor(tri).detach()),
    }
    state.history.append(metrics)
    state.step += 1
    return metrics


def format_metrics(m: dict) -> str:
    return f"{m['step']} {m['epoch']} " + " ".join(f"{m[k]:.6f}" for k in METRIC_NAMES)


# ------------------------------------------------------------- checkpoints


def state_tensors(state: TrainState) -> dict[str, torch.Tensor]:
    out = {f"G.{k}": v for k, v in state.G.state_dict().items()}
    out.update({f"D.{k}": v for k, v in state.D.state_dict().items()})
    for tag, opt, module in (("optG", state.opt_g, state.G), ("optD", state.opt_d, state.D)):
        for name, p in module.named_parameters():
            st = opt.state.get(p)
            if not st:
                continue
            out[f"{tag}.{name}.exp_avg"] = st["exp_avg"]
            out[f"{tag}.{name}.exp_avg_sq"] = st["exp_avg_sq"]
            out[f"{tag}.{name}.step"] = torch.as_tensor(st["step"], dtype=torch.float32).reshape(1)
    return out


def config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["checkpoint_path"] = str(cfg.checkpoint_path) if cfg.checkpoint_path else None
    d["metrics_path"] = str(cfg.metrics_path) if cfg.metrics_path else None
    return d


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["weights"] = LossWeights(**d["weights"])
    d["spec"] = ModelSpec(**d["spec"])
    for k in ("checkpoint_path", "metrics_path"):
        d[k] = Path(d[k]) if d.get(k) else None
    return TrainConfig(**d)


def save_state(state: TrainState, path) -> None:
    meta = {"step": state.step, "epoch": state.epoch, "config": config_dict(state.config)}
    save_checkpoint(path, state.config.spec, state_tensors(state), meta)


def load_state(path, config: TrainConfig | None = None) -> TrainState:
    spec, tensors, meta = load_checkpoint(path)
    cfg = config or config_from_dict(meta["config"])
    if cfg.spec != spec:
        raise ValueError(f"checkpoint {path} holds spec {spec}, config asks for {cfg.spec}")
    state = init_state(cfg)
    _load_prefixed(state.G, tensors, "G.", path)
    _load_prefixed(state.D, tensors, "D.", path)
    for tag, opt, module in (("optG", state.opt_g, state.G), ("optD", state.opt_d, state.D)):
        for name, p in module.named_parameters():
            key = f"{tag}.{name}"
            if f"{key}.exp_avg" in tensors:
                opt.state[p] = {
                    "step": torch.tensor(float(tensors[f"{key}.step"][0])),
                    "exp_avg": tensors[f"{key}.exp_avg"].clone(),
                    "exp_avg_sq": tensors[f"{key}.exp_avg_sq"].clone(),
                }
    state.step = int(meta["step"])
    state.epoch = int(meta["epoch"])
    return state


def load_generator(path) -> tuple[UNetGenerator, dict]:
    spec, tensors, meta = load_checkpoint(path)
    G = build_generator(spec)
    _load_prefixed(G, tensors, "G.", path)
    return G, meta


# ------------------------------------------------------------------ loops


def steps_per_epoch(n_frames: int, batch_size: int) -> int:
    return max(1, math.ceil(n_frames / batch_size))


def train(config: TrainConfig, manifest: DatasetManifest | Path | str, resume: bool = False, bank: FrameBank | None = None) -> TrainState:
    """Train on a manifest's train split.

    Runs ``steps`` steps if set, else ``epochs`` epochs. Writes the metric log
    (one line per step) and checkpoints. With ``resume`` and an existing
    checkpoint, training continues from it and the metric log is truncated to
    the checkpoint's step so the stream stays consistent.
    """
    if not isinstance(manifest, DatasetManifest) and bank is None:
        manifest = load_manifest(manifest)
    if bank is None:
        if not manifest.split("train"):
            raise ValueError(f"manifest {manifest.root} has no training sequences")
        bank = FrameBank.from_manifest(manifest, "train")

    spe = steps_per_epoch(len(bank), config.batch_size)
    total = config.steps if config.steps > 0 else config.epochs * spe

    ckpt = config.checkpoint_path
    if resume and ckpt is not None and Path(ckpt).exists():
        state = load_state(ckpt, config)
        log.info("resumed from %s at step %d", ckpt, state.step)
    else:
        state = init_state(config)

    metrics_file = None
    if config.metrics_path is not None:
        mp = Path(config.metrics_path)
        mp.parent.mkdir(parents=True, exist_ok=True)
        kept = []
        if state.step > 0 and mp.exists():
            kept = [l for l in mp.read_text().splitlines() if l and int(l.split()[0]) < state.step]
        mp.write_text("".join(l + "\n" for l in kept))
        metrics_file = open(mp, "a")

    try:
        while state.step < total:
            state.epoch = state.step // spe
            batch = make_batch(bank, config, state.step)
            m = train_step(state, batch)
            if metrics_file is not None:
                metrics_file.write(format_metrics(m) + "\n")
                metrics_file.flush()
            if state.step % max(1, spe) == 0 or state.step == total:
                log.info("step %s", format_metrics(m))
            if ckpt is not None and config.checkpoint_every > 0 and state.step % config.checkpoint_every == 0:
                save_state(state, ckpt)
    finally:
        if metrics_file is not None:
            metrics_file.close()
    state.epoch = state.step // spe
    if ckpt is not None:
        Path(ckpt).parent.mkdir(parents=True, exist_ok=True)
        save_state(state, ckpt)
    return state


@torch.no_grad()
def generate_sequence(G: UNetGenerator, x, S: list[Skeleton], dropout_seed: int = 0, dropout: bool = True) -> torch.Tensor:
    """Generate one frame per skeleton; returns normalized (n, 3, H, W).

    All frames go through the generator as one batch. Frame ``j`` uses
    dropout seed ``dropout_seed ^ j``.
    """
    if len(S) < 1:
        raise ValueError("need at least one skeleton")
    size = G.spec.image_size
    x = np.asarray(x)
    if x.shape != (size, size, 3):
        raise ValueError(f"reference image has shape {x.shape}, generator expects {(size, size, 3)}")
    G.train()  # batch statistics
    xt = to_tensor(x).unsqueeze(0).expand(len(S), -1, -1, -1)
    st = skeleton_tensor(S, size)
    seeds = [dropout_seed ^ j for j in range(len(S))]
    return G(xt, st, dropout=dropout, seeds=seeds)
