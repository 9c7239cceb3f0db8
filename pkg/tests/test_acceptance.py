"""Acceptance criteria 1-9, one verdict line each.

Criteria 7-9 are soft: the pinned seed is tried first and, on failure, the
two alternate seeds are run; the criterion holds if at least two of the three
seeds satisfy it.
"""

import math

import numpy as np
import pytest
import torch

from skelgen.evaluate import refit_skeleton
from skelgen.experiments import ALTERNATE_SEEDS, AblationSettings, GoldenSettings, golden_overfit, run_ablations
from skelgen.losses import EPS, LossWeights, TripletIndexSet, cgan_loss, l1_loss, triplet_loss
from skelgen.models import (
    VARIANTS,
    ModelSpec,
    build_discriminator,
    build_generator,
    layer_shapes,
    load_models,
    model_tensors,
    save_checkpoint,
)
from skelgen.synthdata import build_dataset, load_sequence, make_sequence, render_person, save_sequence
from skelgen.training import (
    TrainConfig,
    denormalize_image,
    discriminator_loss,
    generator_losses,
    normalize_image,
    train,
)

from gradcheck import fd_check, images, tiny_batch
from oracles import bce_losses, l1, triplet

pytestmark = pytest.mark.slow


@pytest.fixture
def verdict(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {k}: {detail}"

    return emit


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


# ------------------------------------------------------------ 1. losses


def test_criterion_1_loss_arithmetic(verdict):
    rng = np.random.default_rng(0)
    worst = 0.0
    cases = [([0.5], [0.5]), ([1.0], [0.0]), ([0.0], [1.0]), ([1.0, 0.0, 0.3], [1.0, 0.0, 0.7])]
    cases += [(list(rng.uniform(0, 1, k)), list(rng.uniform(0, 1, k))) for k in range(1, 9)]
    for real, fake in cases:
        ld, lg = cgan_loss(real, fake)
        rd, rg = bce_losses(real, fake)
        worst = max(worst, rel(float(ld), rd), rel(float(lg), rg))
    worst = max(worst, rel(float(cgan_loss([0.5], [0.5])[0]), 2 * math.log(2)))
    worst = max(worst, rel(float(cgan_loss([1.0], [0.0])[1]), -math.log(EPS)))

    for k in range(1, 9):
        a, b = rng.uniform(-1, 1, k), rng.uniform(-1, 1, k)
        worst = max(worst, rel(float(l1_loss(a, b)), l1(a, b)))
    worst = max(worst, rel(float(l1_loss(np.full(4, 0.5), np.full(4, 0.25))), 0.25))

    T = TripletIndexSet((0,), 1, 2)
    worst = max(worst, rel(float(triplet_loss(np.array([[0.0, 0], [2, 0], [1, 0]]), T, 0.2)), 3.2))
    hinge_zero = float(triplet_loss(np.array([[0.0, 0], [1, 0], [3, 0]]), T, 0.2))
    exact_zero = float(triplet_loss(np.array([[0.0], [0.5], [0.75]]), T, 0.3125))
    same_ap = float(triplet_loss(np.array([[0.1, 0], [0.1, 0], [0.3, 0]]), T, 0.2))
    worst = max(worst, rel(same_ap, 0.2 - 0.04))
    for _ in range(20):
        frames = rng.uniform(-1, 1, (8, 1))
        Ts = TripletIndexSet((0, 1, 2), 1, 5)
        alpha = float(rng.uniform(0, 1))
        want = triplet(frames.tolist(), Ts.triples(), alpha)
        got = float(triplet_loss(frames, Ts, alpha))
        worst = max(worst, abs(got - want) / max(abs(want), 1e-12) if want else abs(got))
    ok = worst < 1e-6 and hinge_zero == 0.0 and exact_zero == 0.0
    verdict(1, ok, f"max rel err {worst:.2e}, hinge zeros {hinge_zero}, {exact_zero}")


# ---------------------------------------------------------- 2. gradients


def test_criterion_2_gradients(verdict):
    tiny = ModelSpec(image_size=8, depth=3, base_channels=4, discriminator_depth=2)
    errs = {}
    for v in VARIANTS:
        spec = tiny.with_variant(v)
        G = build_generator(spec, seed=1).double()
        D = build_discriminator(spec, seed=2).double()
        batch = tiny_batch()
        cfg = TrainConfig(spec=spec, weights=LossWeights(lambda_=100, beta=1, alpha=40.0))
        for p in D.parameters():
            p.requires_grad_(False)
        e_g = fd_check(lambda: generator_losses(G, D, batch, cfg)[0], list(G.parameters()))
        for p in D.parameters():
            p.requires_grad_(True)
        with torch.no_grad():
            fake = G(batch.x, batch.s, dropout=True, seeds=batch.dropout_seed)
        e_d = fd_check(lambda: discriminator_loss(D, batch, fake), list(D.parameters()))
        errs[v] = (e_g, e_d)
    worst = max(max(e) for e in errs.values())
    detail = ", ".join(f"{v} G {g:.1e} D {d:.1e}" for v, (g, d) in errs.items())
    verdict(2, worst < 1e-3, detail)


# ------------------------------------------------------- 3. architecture


def test_criterion_3_architecture(verdict):
    problems = []
    ref = ModelSpec.reference("stacked1")
    G = build_generator(ref)
    shapes = layer_shapes(G, images(1, 256), images(1, 256))
    enc = [s for s in shapes if s[0].startswith("encoders.0")]
    if enc[0][1][1] != 6 or [o[1] for _, _, o in enc] != [64, 128, 256] + [512] * 5:
        problems.append("encoder channels")
    if [o[2] for _, _, o in enc] != [256 // 2**l for l in range(1, 9)]:
        problems.append("encoder spatial")
    dec = [s for s in shapes if s[0].startswith("decoder")]
    if [i[1] for _, i, _ in dec] != [512, 1024, 1024, 1024, 1024, 512, 256, 128]:
        problems.append("decoder inputs")
    D = build_discriminator(ModelSpec.reference())
    dshapes = layer_shapes(D, images(1, 256), images(1, 256), images(1, 256))
    if dshapes[0][1][1:] != (9, 256, 256):
        problems.append("discriminator input")
    if [o[1] for _, _, o in dshapes[:-1]] != [64, 128, 256, 512, 512, 512]:
        problems.append("discriminator channels")
    for v in VARIANTS:
        desk = ModelSpec(variant=v)
        for e in build_generator(desk).encoders:
            for l, layer in enumerate(e.layers, start=1):
                conv = layer[0]
                if conv.out_channels != min(desk.base_channels * 2 ** (l - 1), 8 * desk.base_channels):
                    problems.append(f"desk {v} layer {l}")
    verdict(3, not problems, "all layer shapes match" if not problems else "; ".join(problems))


# ------------------------------------------------------ 4. normalization


def test_criterion_4_normalization_and_io(verdict, tmp_path):
    problems = []
    v = np.array([0.0, 0.5, 1.0])
    if normalize_image(v).tolist() != [-1.0, 0.0, 1.0] or denormalize_image(normalize_image(v)).tolist() != v.tolist():
        problems.append("normalization endpoints")

    man = build_dataset(3, ["walking", "handwaving"], 8, 64, 5, tmp_path / "d1")
    for r in man.records:
        save_sequence(load_sequence(man, r.seq_id), tmp_path / "d2")
        for name, path in r.files(man.root).items():
            if path.read_bytes() != (tmp_path / "d2" / r.seq_id / path.name).read_bytes():
                problems.append(f"dataset {r.seq_id}/{name}")

    spec = ModelSpec(depth=6, base_channels=4, discriminator_depth=3)
    G, D = build_generator(spec, 1), build_discriminator(spec, 2)
    save_checkpoint(tmp_path / "a.skg", spec, model_tensors(G, D), {"step": 0})
    G2, D2, meta = load_models(tmp_path / "a.skg")
    save_checkpoint(tmp_path / "b.skg", spec, model_tensors(G2, D2), meta)
    if (tmp_path / "a.skg").read_bytes() != (tmp_path / "b.skg").read_bytes():
        problems.append("checkpoint bytes")

    logs = []
    for k in range(2):
        cfg = TrainConfig(spec=spec, batch_size=4, steps=5, seed=3, metrics_path=tmp_path / f"m{k}.txt")
        train(cfg, man)
        logs.append(cfg.metrics_path.read_bytes())
    if logs[0] != logs[1] or not logs[0]:
        problems.append("metric logs differ")
    verdict(4, not problems, "endpoints, dataset, checkpoint and metric logs identical" if not problems else "; ".join(problems))


# ------------------------------------------------------------ 5. golden


def test_criterion_5_golden_overfit(verdict):
    s = GoldenSettings()
    r = golden_overfit(s)
    ok = r.l1 < 0.05 and r.pose_error < 3
    verdict(5, ok, f"seed {s.seed}: L1 {r.l1:.4f} (< 0.05), refit {r.pose_error:.2f} px (< 3), {r.seconds:.0f} s")


# -------------------------------------------------------- 6. pose oracle


def test_criterion_6_pose_oracle(verdict):
    rng = np.random.default_rng(6)
    errors, diverged = [], 0
    for k in range(10):
        action = ("walking", "running", "handwaving")[k % 3]
        smp = make_sequence(k, action, 10, 64, 100 + k, "flat")
        for s in smp.S:
            frame = render_person(s, smp.appearance, smp.background(), 64)
            init = type(s)(np.clip(s.joints + rng.uniform(-2, 2, s.joints.shape) / 64, -0.5, 1.5))
            r = refit_skeleton(frame, smp.appearance, init, background=smp.background(), reference=s)
            errors.append(r.mean_error)
            diverged += r.diverged
    mean = float(np.mean(errors))
    verdict(6, mean < 0.5 and len(errors) == 100, f"{len(errors)} frames, mean error {mean:.3f} px, max {max(errors):.3f}, diverged {diverged}")


# ------------------------------------------------------- 7-9. ablations


class _Seeds:
    def __init__(self, root):
        self.root = root
        self.cache = {}

    def get(self, seed):
        if seed not in self.cache:
            self.cache[seed] = run_ablations(AblationSettings(seed=seed), root=self.root)
        return self.cache[seed]


@pytest.fixture(scope="module")
def ablations(tmp_path_factory):
    return _Seeds(tmp_path_factory.mktemp("ablate"))


def soft(ablations, check):
    """Pinned seed first; alternates only on failure; >= 2 of 3 must hold."""
    seeds = [AblationSettings().seed]
    outcomes = {seeds[0]: check(ablations.get(seeds[0]))}
    if not outcomes[seeds[0]][0]:
        for s in ALTERNATE_SEEDS:
            outcomes[s] = check(ablations.get(s))
        ok = sum(o[0] for o in outcomes.values()) >= 2
    else:
        ok = True
    detail = " | ".join(f"seed {s}: {'ok' if o[0] else 'no'} {o[1]}" for s, o in outcomes.items())
    return ok, detail


def test_criterion_7_loss_ablation_accuracy(verdict, ablations):
    def check(res):
        a = {n: res.acc(n) for n in ("L1", "G", "L1+G")}
        ok = a["L1+G"] >= a["L1"] >= a["G"] and a["L1+G"] >= 0.8 and res.gt_accuracy >= 0.95
        return ok, f"GT {res.gt_accuracy:.3f} L1+G {a['L1+G']:.3f} L1 {a['L1']:.3f} G {a['G']:.3f}"

    verdict(7, *soft(ablations, check))


def test_criterion_8_triplet_consistency(verdict, ablations):
    def check(res):
        t, g = res.runs["L1+G+T"].consistency, res.runs["L1+G"].consistency
        d = res.runs["L1+G+T"].n_diverged
        return t <= g, f"consistency L1+G+T {t:.4f} (diverged {d}) L1+G {g:.4f}"

    verdict(8, *soft(ablations, check))


def test_criterion_9_structure_color_error(verdict, ablations):
    def check(res):
        c = {v: res.runs[v].color_error for v in VARIANTS}
        ok = c["siamese"] < c["stacked1"] and c["siamese"] < c["stacked2"]
        return ok, " ".join(f"{v} {c[v]:.4f}" for v in VARIANTS)

    verdict(9, *soft(ablations, check))
