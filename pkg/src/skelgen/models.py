"""U-Net generators (stacked1, stacked2, siamese) and the stacked patch discriminator.

Layer plan, for an encoder of ``depth`` layers with base width ``b``:

* encoder layer ``l`` (1-based): 4x4 stride-2 conv to ``min(b * 2**(l-1), cap * b)``
  channels, BN from layer 2 on, leaky ReLU 0.2;
* decoder layer ``l``: 4x4 stride-2 transposed conv, BN, dropout 0.5, ReLU, with
  the output concatenated to the matching encoder activation; the last layer
  maps to 3 channels followed by tanh.

At the reference spec (256 px, depth 8, b=64) the decoder input widths are
512, 1024, 1024, 1024, 1024, 512, 256, 128.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import torch
from torch import nn

VARIANTS = ("stacked1", "stacked2", "siamese")
LEAKY_SLOPE = 0.2
DROPOUT_RATE = 0.5
INIT_STD = 0.02


@dataclass(frozen=True)
class ModelSpec:
    image_size: int = 64
    depth: int = 6
    base_channels: int = 16
    channel_cap_factor: int = 8
    variant: str = "siamese"
    discriminator_depth: int = 4

    def __post_init__(self):
        k = int(round(math.log2(self.image_size))) if self.image_size > 0 else -1
        if self.image_size <= 0 or 2**k != self.image_size:
            raise ValueError(f"image_size must be a power of two, got {self.image_size}")
        if not 1 <= self.depth <= k:
            raise ValueError(
                f"depth {self.depth} invalid for image_size {self.image_size}: "
                f"image_size / 2**depth must be >= 1"
            )
        if not 1 <= self.discriminator_depth <= k - 1:
            raise ValueError(
                f"discriminator_depth {self.discriminator_depth} invalid for image_size "
                f"{self.image_size}: the final feature map must be at least 2x2"
            )
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.base_channels < 1 or self.channel_cap_factor < 1:
            raise ValueError("base_channels and channel_cap_factor must be positive")

    @classmethod
    def reference(cls, variant: str = "stacked1") -> "ModelSpec":
        return cls(image_size=256, depth=8, base_channels=64, variant=variant, discriminator_depth=6)

    def with_variant(self, variant: str) -> "ModelSpec":
        return ModelSpec(**{**asdict(self), "variant": variant})

    def channels(self, n_layers: int) -> list[int]:
        cap = self.channel_cap_factor * self.base_channels
        return [min(self.base_channels * 2**l, cap) for l in range(n_layers)]

    @property
    def encoder_channels(self) -> list[int]:
        return self.channels(self.depth)

    @property
    def discriminator_channels(self) -> list[int]:
        return self.channels(self.discriminator_depth)

    @property
    def encoder_input_channels(self) -> int:
        return 6 if self.variant == "stacked1" else 3

    @property
    def n_encoders(self) -> int:
        return 2 if self.variant == "siamese" else 1

    @property
    def bottleneck_size(self) -> int:
        return self.image_size // 2**self.depth

    def decoder_plan(self) -> list[tuple[int, int]]:
        """(input, output) channels of each decoder layer."""
        enc = self.encoder_channels
        k = self.n_encoders
        plan = []
        for l in range(1, self.depth + 1):
            if l == 1:
                c_in = k * enc[-1]
            else:
                c_in = plan[-1][1] + k * enc[self.depth - l]
            c_out = enc[self.depth - l - 1] if l < self.depth else 3
            plan.append((c_in, c_out))
        return plan


# --------------------------------------------------------------- counting


def encoder_param_count(spec: ModelSpec, in_channels: int | None = None) -> int:
    """Closed-form parameter count of one encoder."""
    c_prev = spec.encoder_input_channels if in_channels is None else in_channels
    total = 0
    for l, c in enumerate(spec.encoder_channels, start=1):
        total += 16 * c_prev * c
        total += c if l == 1 else 2 * c  # conv bias on layer 1, BN scale/offset after
        c_prev = c
    return total


def decoder_param_count(spec: ModelSpec) -> int:
    total = 0
    for l, (c_in, c_out) in enumerate(spec.decoder_plan(), start=1):
        total += 16 * c_in * c_out
        total += c_out if l == spec.depth else 2 * c_out
    return total


def generator_param_count(spec: ModelSpec) -> int:
    return spec.n_encoders * encoder_param_count(spec) + decoder_param_count(spec)


def discriminator_param_count(spec: ModelSpec) -> int:
    c_prev, total = 9, 0
    for l, c in enumerate(spec.discriminator_channels, start=1):
        total += 16 * c_prev * c + (c if l == 1 else 2 * c)
        c_prev = c
    return total + 16 * c_prev + 1


# ---------------------------------------------------------------- modules


def _init_weights(module: nn.Module, generator: torch.Generator) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=generator) * INIT_STD)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class BatchStatNorm(nn.BatchNorm2d):
    """Batch normalization that always uses the current batch's statistics.

    With a single value per channel (one sample at 1x1) the centred input is
    zero and the output is the learned offset; torch refuses that case.
    """

    def __init__(self, c: int):
        super().__init__(c, track_running_stats=False)

    def forward(self, x):
        if x.shape[0] * x.shape[2] * x.shape[3] == 1:
            return (x - x) * self.weight[None, :, None, None] + self.bias[None, :, None, None]
        return super().forward(x)


def _batch_norm(c: int) -> nn.BatchNorm2d:
    return BatchStatNorm(c)


class Encoder(nn.Module):
    def __init__(self, in_channels: int, channels: Sequence[int]):
        super().__init__()
        layers = []
        c_prev = in_channels
        for l, c in enumerate(channels, start=1):
            block = [nn.Conv2d(c_prev, c, 4, 2, 1, bias=(l == 1))]
            if l > 1:
                block.append(_batch_norm(c))
            block.append(nn.LeakyReLU(LEAKY_SLOPE))
            layers.append(nn.Sequential(*block))
            c_prev = c
        self.layers = nn.ModuleList(layers)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        for layer in self.layers:
            x = layer(x)
            feats.append(x)
        return feats


class DecoderLayer(nn.Module):
    def __init__(self, c_in: int, c_out: int, last: bool):
        super().__init__()
        self.last = last
        self.conv = nn.ConvTranspose2d(c_in, c_out, 4, 2, 1, bias=last)
        self.norm = None if last else _batch_norm(c_out)

    def forward(self, x, mask=None):
        x = self.conv(x)
        if self.last:
            return torch.tanh(x)
        x = self.norm(x)
        if mask is not None:
            x = x * mask
        return torch.relu(x)


def _dropout_masks(shapes, seeds, batch: int, dtype) -> list[torch.Tensor]:
    """Inverted-dropout masks.

    ``seeds`` is an int (one stream for the whole batch) or one int per sample,
    so a sample's noise depends only on its own seed.
    """
    keep = 1.0 - DROPOUT_RATE
    if isinstance(seeds, (int,)):
        g = torch.Generator().manual_seed(int(seeds))
        return [
            (torch.rand((batch,) + s, generator=g) < keep).to(dtype) / keep for s in shapes
        ]
    if len(seeds) != batch:
        raise ValueError(f"need one dropout seed per sample: {len(seeds)} seeds for batch {batch}")
    per_sample = []
    for seed in seeds:
        g = torch.Generator().manual_seed(int(seed))
        per_sample.append([(torch.rand(s, generator=g) < keep).to(dtype) / keep for s in shapes])
    return [torch.stack([m[i] for m in per_sample]) for i in range(len(shapes))]


class UNetGenerator(nn.Module):
    def __init__(self, spec: ModelSpec, seed: int = 0):
        super().__init__()
        self.spec = spec
        enc = spec.encoder_channels
        self.encoders = nn.ModuleList(
            [Encoder(spec.encoder_input_channels, enc) for _ in range(spec.n_encoders)]
        )
        plan = spec.decoder_plan()
        self.decoder = nn.ModuleList(
            [DecoderLayer(ci, co, last=(l == spec.depth - 1)) for l, (ci, co) in enumerate(plan)]
        )
        _init_weights(self, torch.Generator().manual_seed(seed))

    def dropout_shapes(self) -> list[tuple[int, int, int]]:
        s = self.spec
        shapes = []
        for l, (_, c_out) in enumerate(s.decoder_plan()[:-1], start=1):
            size = s.bottleneck_size * 2**l
            shapes.append((c_out, size, size))
        return shapes

    def assemble_inputs(self, x: torch.Tensor, s: torch.Tensor) -> list[torch.Tensor]:
        v = self.spec.variant
        if v == "stacked1":
            return [torch.cat([x, s], dim=1)]
        if v == "stacked2":
            # skeleton pixels (anything above the normalized black level) become white
            return [torch.where(s > -1.0, torch.ones_like(x), x)]
        return [x, s]

    def forward(self, x, s, dropout: bool = False, seeds=0):
        check_image_batch(x, self.spec.image_size, "x")
        check_image_batch(s, self.spec.image_size, "s")
        if x.shape[0] != s.shape[0]:
            raise ValueError(f"batch mismatch: x has {x.shape[0]} samples, s has {s.shape[0]}")
        inputs = self.assemble_inputs(x, s)
        feats = [enc(inp) for enc, inp in zip(self.encoders, inputs)]
        skips = [torch.cat(level, dim=1) for level in zip(*feats)]

        masks = None
        if dropout:
            shapes = self.dropout_shapes()
            masks = _dropout_masks(shapes, seeds, x.shape[0], x.dtype)

        h = skips[-1]
        depth = self.spec.depth
        for l, layer in enumerate(self.decoder, start=1):
            if l > 1:
                h = torch.cat([h, skips[depth - l]], dim=1)
            h = layer(h, None if masks is None or l == depth else masks[l - 1])
        return h


class PatchDiscriminator(nn.Module):
    """Stacked (x, s, y) -> per-patch real probabilities."""

    def __init__(self, spec: ModelSpec, seed: int = 0):
        super().__init__()
        self.spec = spec
        layers = []
        c_prev = 9
        for l, c in enumerate(spec.discriminator_channels, start=1):
            block = [nn.Conv2d(c_prev, c, 4, 2, 1, bias=(l == 1))]
            if l > 1:
                block.append(_batch_norm(c))
            block.append(nn.LeakyReLU(LEAKY_SLOPE))
            layers.append(nn.Sequential(*block))
            c_prev = c
        self.features = nn.Sequential(*layers)
        self.head = nn.Conv2d(c_prev, 1, 4, 1, 1)
        _init_weights(self, torch.Generator().manual_seed(seed))

    def forward(self, x, s, y) -> tuple[torch.Tensor, torch.Tensor]:
        for name, t in (("x", x), ("s", s), ("y", y)):
            check_image_batch(t, self.spec.image_size, name)
        scores = torch.sigmoid(self.head(self.features(torch.cat([x, s, y], dim=1))))
        return scores, scores.mean(dim=(1, 2, 3))


def check_image_batch(t: torch.Tensor, size: int, name: str) -> None:
    if t.dim() != 4 or tuple(t.shape[1:]) != (3, size, size):
        raise ValueError(f"{name}: expected shape (B, 3, {size}, {size}), got {tuple(t.shape)}")


def build_generator(spec: ModelSpec, seed: int = 0) -> UNetGenerator:
    return UNetGenerator(spec, seed)


def build_discriminator(spec: ModelSpec, seed: int = 0) -> PatchDiscriminator:
    return PatchDiscriminator(spec, seed)


def generator_forward(G: UNetGenerator, x, s, dropout_on: bool = False, seed=0) -> torch.Tensor:
    return G(x, s, dropout=dropout_on, seeds=seed)


def discriminator_forward(D: PatchDiscriminator, x, s, y):
    return D(x, s, y)


def layer_shapes(module: nn.Module, *inputs) -> list[tuple[str, tuple[int, ...]]]:
    """Output shape of every conv / transposed conv, in call order."""
    out = []
    hooks = []
    for name, m in module.named_modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            hooks.append(
                m.register_forward_hook(
                    lambda mod, i, o, name=name: out.append((name, tuple(i[0].shape), tuple(o.shape)))
                )
            )
    try:
        with torch.no_grad():
            module(*inputs)
    finally:
        for h in hooks:
            h.remove()
    return out


# -------------------------------------------------------------- checkpoints

MAGIC = b"SKGCKPT\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, spec: ModelSpec, tensors: dict[str, torch.Tensor], meta: dict | None = None) -> None:
    """Write ``tensors`` as little-endian float32 blobs after a JSON header.

    Layout: magic, u32 version, u32 header length, header JSON (spec + meta),
    u32 tensor count, then per tensor: u32 name length, name, u32 ndim,
    ndim x u32 shape, float32 data.
    """
    header = json.dumps({"spec": asdict(spec), "meta": meta or {}}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(header)), header]
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        t = tensors[name].detach().to(torch.float32).contiguous().cpu()
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack("<I", t.dim()) + struct.pack(f"<{t.dim()}I", *t.shape))
        parts.append(t.numpy().astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[ModelSpec, dict[str, torch.Tensor], dict]:
    import numpy as np

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint {path}")
    data = path.read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic bytes, not a checkpoint file")
    try:
        off = len(MAGIC)
        version, hlen = struct.unpack_from("<II", data, off)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        off += 8
        header = json.loads(data[off : off + hlen])
        off += hlen
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off : off + nlen].decode()
            off += nlen
            (ndim,) = struct.unpack_from("<I", data, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            numel = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f4", count=numel, offset=off).reshape(shape)
            off += 4 * numel
            tensors[name] = torch.from_numpy(arr.astype(np.float32))
        if off != len(data):
            raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        if isinstance(e, CheckpointError):
            raise
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({e})") from None
    return ModelSpec(**header["spec"]), tensors, header["meta"]


def model_tensors(G: nn.Module, D: nn.Module) -> dict[str, torch.Tensor]:
    out = {f"G.{k}": v for k, v in G.state_dict().items()}
    out.update({f"D.{k}": v for k, v in D.state_dict().items()})
    return out


def load_models(path) -> tuple[UNetGenerator, PatchDiscriminator, dict]:
    spec, tensors, meta = load_checkpoint(path)
    G, D = build_generator(spec), build_discriminator(spec)
    _load_prefixed(G, tensors, "G.", path)
    _load_prefixed(D, tensors, "D.", path)
    return G, D, meta


def _load_prefixed(module: nn.Module, tensors, prefix: str, path) -> None:
    state = module.state_dict()
    for k, v in state.items():
        key = prefix + k
        if key not in tensors:
            raise CheckpointError(f"{path}: missing tensor {key}")
        if tuple(tensors[key].shape) != tuple(v.shape):
            raise CheckpointError(
                f"{path}: tensor {key} has shape {tuple(tensors[key].shape)}, model expects {tuple(v.shape)}"
            )
        state[k] = tensors[key].to(v.dtype)
    module.load_state_dict(state)
