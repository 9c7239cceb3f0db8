"""Adversarial, L1 and triplet objectives and their weighted combination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_: float = 100.0  # L1 weight
    beta: float = 1.0  # triplet weight
    alpha: float = 0.2  # triplet margin
    adv: float = 1.0  # adversarial weight; 0 gives the L1-only ablation

    def __post_init__(self):
        for name in ("lambda_", "beta", "alpha", "adv"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name.rstrip('_')} must be >= 0")


# Weight presets of the loss ablation.
ABLATIONS = {
    "L1": dict(adv=0.0, beta=0.0),
    "G": dict(lambda_=0.0, beta=0.0),
    "L1+G": dict(beta=0.0),
    "L1+G+T": dict(),
}


def ablation_weights(name: str, base: LossWeights | None = None) -> LossWeights:
    base = base or LossWeights()
    if name not in ABLATIONS:
        raise ValueError(f"unknown loss combination {name!r}; expected one of {list(ABLATIONS)}")
    fields = dict(lambda_=base.lambda_, beta=base.beta, alpha=base.alpha, adv=base.adv)
    fields.update(ABLATIONS[name])
    return LossWeights(**fields)


def _as_tensor(v) -> torch.Tensor:
    if isinstance(v, torch.Tensor):
        return v
    return torch.as_tensor(np.asarray(v, dtype=np.float64))


def cgan_loss(real_scores, fake_scores) -> tuple[torch.Tensor, torch.Tensor]:
    """Discriminator and (non-saturating) generator losses from mean patch scores.

    loss_d = -[log D(real) + log(1 - D(fake))]
    loss_g = -log D(fake)

    Both are averaged over the batch. Scores are clamped to [eps, 1 - eps].
    """
    real = _as_tensor(real_scores)
    fake = _as_tensor(fake_scores)
    for name, t in (("real", real), ("fake", fake)):
        if torch.any(t < 0) or torch.any(t > 1) or not torch.all(torch.isfinite(t)):
            raise ValueError(f"{name} discriminator scores must lie in [0, 1]")
    real = real.clamp(EPS, 1 - EPS)
    fake = fake.clamp(EPS, 1 - EPS)
    loss_d = -(torch.log(real).mean() + torch.log1p(-fake).mean())
    loss_g = -torch.log(fake).mean()
    return loss_d, loss_g


def l1_loss(y, y_hat) -> torch.Tensor:
    y, y_hat = _as_tensor(y), _as_tensor(y_hat)
    if y.shape != y_hat.shape:
        raise ValueError(f"l1_loss shape mismatch: {tuple(y.shape)} vs {tuple(y_hat.shape)}")
    return (y - y_hat).abs().mean()


@dataclass(frozen=True)
class TripletIndexSet:
    anchors: tuple[int, ...]
    pos_offset: int = 1
    neg_offset: int = 5

    @property
    def positives(self) -> tuple[int, ...]:
        return tuple(a + self.pos_offset for a in self.anchors)

    @property
    def negatives(self) -> tuple[int, ...]:
        return tuple(a + self.neg_offset for a in self.anchors)

    @property
    def m(self) -> int:
        return len(self.anchors)

    def triples(self) -> list[tuple[int, int, int]]:
        return list(zip(self.anchors, self.positives, self.negatives))


def sample_triplets(n_frames: int, m: int, pos_offset: int = 1, neg_offset: int = 5, seed: int = 0) -> TripletIndexSet:
    """Anchors drawn without replacement from [0, n_frames - neg_offset)."""
    if not neg_offset > pos_offset >= 1:
        raise ValueError(f"offsets must satisfy neg_offset > pos_offset >= 1, got ({pos_offset}, {neg_offset})")
    if n_frames <= neg_offset:
        raise ValueError(
            f"triplets with negative offset {neg_offset} need sequences of at least "
            f"{neg_offset + 1} frames, got {n_frames}"
        )
    if m < 1:
        raise ValueError(f"need m >= 1 triplets, got {m}")
    n_valid = n_frames - neg_offset
    if m > n_valid:
        raise ValueError(f"only {n_valid} anchors available for {n_frames} frames, asked for {m}")
    anchors = np.random.default_rng(seed).permutation(n_valid)[:m]
    return TripletIndexSet(tuple(int(a) for a in anchors), pos_offset, neg_offset)


def triplet_loss(frames, T: TripletIndexSet, alpha: float = 0.2) -> torch.Tensor:
    """Mean over triples of [|a - p|^2 - |a - n|^2 + alpha]_+ (squared L2 over all pixels)."""
    f = _as_tensor(frames)
    f = f.reshape(f.shape[0], -1)
    a = f[list(T.anchors)]
    p = f[list(T.positives)]
    n = f[list(T.negatives)]
    d_ap = ((a - p) ** 2).sum(dim=1)
    d_an = ((a - n) ** 2).sum(dim=1)
    return torch.relu(d_ap - d_an + alpha).sum() / T.m


def total_generator_loss(loss_g_adv, loss_l1, loss_tri, w: LossWeights) -> torch.Tensor:
    terms = {"loss_g_adv": loss_g_adv, "loss_l1": loss_l1, "loss_tri": loss_tri}
    for name, v in terms.items():
        if not torch.all(torch.isfinite(_as_tensor(v))):
            raise FloatingPointError(f"non-finite {name} ({float(_as_tensor(v))}); training diverged")
    return w.adv * _as_tensor(loss_g_adv) + w.lambda_ * _as_tensor(loss_l1) + w.beta * _as_tensor(loss_tri)
