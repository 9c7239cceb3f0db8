import copy

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis.extra.numpy import arrays
from hypothesis import strategies as st

from skelgen.evaluate import refit_skeleton
from skelgen.losses import LossWeights, cgan_loss
from skelgen.models import ModelSpec, load_models
from skelgen.training import (
    Batch,
    FrameBank,
    TrainConfig,
    compute_triplet_term,
    denormalize_image,
    format_metrics,
    generate_sequence,
    generator_losses,
    init_state,
    load_state,
    make_batch,
    normalize_image,
    save_state,
    to_image,
    train,
    train_step,
)

SMALL = ModelSpec(image_size=64, depth=6, base_channels=4, discriminator_depth=3)


def small_cfg(tmp_path=None, **kw):
    base = dict(spec=SMALL, batch_size=4, seed=3)
    if tmp_path is not None:
        base.update(checkpoint_path=tmp_path / "ckpt.skg", metrics_path=tmp_path / "metrics.txt")
    base.update(kw)
    return TrainConfig(**base)


def params(m):
    return [p.detach().clone() for p in m.parameters()]


def same(a, b):
    return all(torch.equal(x, y) for x, y in zip(a, b))


class TestNormalization:
    def test_endpoints(self):
        v = np.array([0.0, 0.5, 1.0])
        assert normalize_image(v).tolist() == [-1.0, 0.0, 1.0]
        assert denormalize_image(normalize_image(v)).tolist() == [0.0, 0.5, 1.0]

    def test_out_of_range(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            normalize_image(np.array([1.2]))
        with pytest.raises(ValueError):
            normalize_image(np.array([-0.01]))

    @given(arrays(np.float64, (4, 4, 3), elements=st.floats(0, 1)))
    def test_round_trip(self, img):
        assert np.abs(denormalize_image(normalize_image(img)) - img).max() < 1e-7

    def test_float32_round_trip(self):
        img = np.random.default_rng(0).uniform(0, 1, (8, 8, 3))
        from skelgen.training import to_tensor

        assert np.abs(to_image(to_tensor(img)) - img).max() < 1e-7


@pytest.fixture(scope="module")
def bank(small_dataset):
    return FrameBank.from_manifest(small_dataset, "train")


class TestStep:
    def test_zero_learning_rate_keeps_parameters(self, bank):
        cfg = small_cfg(learning_rate=0.0)
        state = init_state(cfg)
        g0, d0 = params(state.G), params(state.D)
        train_step(state, make_batch(bank, cfg, 0))
        assert same(g0, params(state.G)) and same(d0, params(state.D))

    def test_batch_layout(self, bank):
        cfg = small_cfg()
        b = make_batch(bank, cfg, 0)
        assert b.x.shape == (cfg.batch_size + cfg.group_length, 3, 64, 64)
        assert b.group == slice(cfg.batch_size, cfg.batch_size + 6)
        # the group is consecutive frames of a single sequence
        xs = b.x[b.group]
        assert all(torch.equal(xs[0], xi) for xi in xs)

    def test_batch_from_one_sequence(self, bank):
        # generation batches a whole sequence, so training batches share one reference too
        for step in range(5):
            b = make_batch(bank, small_cfg(), step)
            assert all(torch.equal(b.x[0], xi) for xi in b.x)

    def test_mixed_batches(self, bank):
        b = make_batch(bank, small_cfg(mix_sequences=True, batch_size=10), 0)
        assert len({xi.numpy().tobytes() for xi in b.x}) > 1

    def test_batches_deterministic_per_step(self, bank):
        cfg = small_cfg()
        a, b = make_batch(bank, cfg, 5), make_batch(bank, cfg, 5)
        assert torch.equal(a.y, b.y) and a.dropout_seed == b.dropout_seed
        assert not torch.equal(a.y, make_batch(bank, cfg, 6).y)

    def test_generator_descent_with_frozen_discriminator(self, bank):
        cfg = small_cfg(batch_size=2)
        state = init_state(cfg)
        for p in state.D.parameters():
            p.requires_grad_(False)
        batch = make_batch(bank, cfg, 0)
        losses = []
        for _ in range(21):
            state.opt_g.zero_grad()
            total = generator_losses(state.G, state.D, batch, cfg)[0]
            total.backward()
            state.opt_g.step()
            losses.append(float(total.detach()))
        decreases = sum(b < a for a, b in zip(losses, losses[1:]))
        assert decreases >= 18

    def test_identical_frames_triplet_equals_alpha(self):
        cfg = small_cfg(weights=LossWeights(alpha=0.37))
        fake = torch.zeros(6, 3, 64, 64) + 0.3
        b = Batch(fake, fake, fake, group=slice(0, 6))
        assert float(compute_triplet_term(fake, b, cfg)) == pytest.approx(0.37)

    def test_update_order_and_gradient_ownership(self, bank):
        """Rebuild one step by hand: D sees the pre-update G; G sees the updated D."""
        cfg = small_cfg()
        state = init_state(cfg)
        batch = make_batch(bank, cfg, 0)
        ref = copy.deepcopy(state)
        train_step(state, batch)

        G, D = ref.G, ref.D
        fake = G(batch.x, batch.s, dropout=True, seeds=batch.dropout_seed)
        ref.opt_d.zero_grad()
        _, rs = D(batch.x, batch.s, batch.y)
        _, fs = D(batch.x, batch.s, fake.detach())
        loss_d, _ = cgan_loss(rs, fs)
        loss_d.backward()
        assert all(p.grad is None for p in G.parameters())  # loss_d never reaches G
        ref.opt_d.step()
        d_after = params(D)

        ref.opt_g.zero_grad()
        for p in D.parameters():
            p.grad = None
        total = generator_losses(G, D, batch, cfg, fake=fake)[0]
        total.backward()
        ref.opt_g.step()
        assert same(d_after, params(D))  # the G step leaves D untouched
        assert same(params(state.D), d_after)
        assert same(params(state.G), params(G))

    def test_non_finite_aborts(self, bank):
        cfg = small_cfg()
        state = init_state(cfg)
        with torch.no_grad():
            next(state.G.decoder[-1].parameters()).fill_(float("nan"))
        with pytest.raises(FloatingPointError, match="generator output"):
            train_step(state, make_batch(bank, cfg, 0))

    def test_metrics_line_format(self):
        line = format_metrics(dict(step=3, epoch=1, loss_d=1.0, loss_g_adv=0.5, loss_l1=0.25, loss_tri=0.0))
        assert line == "3 1 1.000000 0.500000 0.250000 0.000000"

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=-1)

    def test_paper_defaults(self):
        cfg = TrainConfig()
        assert (cfg.learning_rate, cfg.batch_size, cfg.beta1, cfg.beta2) == (0.0002, 10, 0.5, 0.999)
        assert cfg.dropout_at_generation


class TestTrainLoop:
    def test_zero_epochs_checkpoint_is_init(self, small_dataset, tmp_path):
        cfg = small_cfg(tmp_path, epochs=0)
        train(cfg, small_dataset)
        G, D, _ = load_models(cfg.checkpoint_path)
        init = init_state(cfg)
        assert same(params(G), params(init.G)) and same(params(D), params(init.D))
        assert cfg.metrics_path.read_text() == ""

    def test_same_seed_identical_logs(self, small_dataset, tmp_path):
        logs = []
        for k in range(2):
            cfg = small_cfg(tmp_path / str(k), steps=4)
            train(cfg, small_dataset)
            logs.append(cfg.metrics_path.read_bytes())
        assert logs[0] == logs[1]
        lines = logs[0].decode().splitlines()
        assert len(lines) == 4 and [l.split()[0] for l in lines] == ["0", "1", "2", "3"]

    def test_resume_matches_uninterrupted(self, small_dataset, tmp_path):
        full = small_cfg(tmp_path / "full", steps=6)
        train(full, small_dataset)

        part = small_cfg(tmp_path / "part", steps=3)
        train(part, small_dataset)
        # simulate a crash that left extra metric lines past the checkpoint
        with open(part.metrics_path, "a") as f:
            f.write("3 0 9.0 9.0 9.0 9.0\n")
        rest = small_cfg(tmp_path / "part", steps=6)
        state = train(rest, small_dataset, resume=True)
        assert state.step == 6
        assert part.metrics_path.read_bytes() == full.metrics_path.read_bytes()
        G1, D1, _ = load_models(full.checkpoint_path)
        G2, D2, _ = load_models(rest.checkpoint_path)
        assert same(params(G1), params(G2)) and same(params(D1), params(D2))

    def test_state_round_trip(self, small_dataset, tmp_path):
        cfg = small_cfg(steps=2)
        state = train(cfg, small_dataset)
        save_state(state, tmp_path / "s.skg")
        back = load_state(tmp_path / "s.skg")
        assert back.step == 2
        assert same(params(state.G), params(back.G))
        m1 = state.opt_g.state_dict()["state"]
        m2 = back.opt_g.state_dict()["state"]
        for k in m1:
            assert torch.equal(m1[k]["exp_avg"], m2[k]["exp_avg"])
            assert torch.equal(m1[k]["exp_avg_sq"], m2[k]["exp_avg_sq"])

    def test_empty_train_split(self, tmp_path):
        from skelgen.synthdata.dataset import DatasetManifest

        man = DatasetManifest(root=tmp_path, records=[], seed=0, size=64, n_frames=8, background="flat")
        with pytest.raises(ValueError, match="no training"):
            train(small_cfg(steps=1), man)


class TestGenerate:
    def test_single_skeleton(self, small_dataset):
        from skelgen.synthdata import load_sequence

        s = load_sequence(small_dataset, small_dataset.records[0].seq_id)
        G = init_state(small_cfg()).G
        out = generate_sequence(G, s.x, s.S[:1], 0)
        assert out.shape == (1, 3, 64, 64)

    def test_no_dropout_deterministic(self, small_dataset):
        from skelgen.synthdata import load_sequence

        s = load_sequence(small_dataset, small_dataset.records[0].seq_id)
        G = init_state(small_cfg()).G
        a = generate_sequence(G, s.x, s.S, 1, dropout=False)
        assert torch.equal(a, generate_sequence(G, s.x, s.S, 2, dropout=False))
        b = generate_sequence(G, s.x, s.S, 1, dropout=True)
        assert torch.equal(b, generate_sequence(G, s.x, s.S, 1, dropout=True))
        assert not torch.equal(a, b)

    def test_per_frame_seeds(self, small_dataset):
        from skelgen.synthdata import load_sequence

        s = load_sequence(small_dataset, small_dataset.records[0].seq_id)
        G = init_state(small_cfg()).G
        out = generate_sequence(G, s.x, s.S, 5)
        assert out.shape[0] == s.n and float(out.abs().max()) <= 1

    def test_size_mismatch(self, small_dataset):
        G = init_state(small_cfg()).G
        from skelgen.synthdata import canonical_pose

        with pytest.raises(ValueError, match="reference image"):
            generate_sequence(G, np.zeros((32, 32, 3)), [canonical_pose()], 0)

    def test_untrained_generator_refit_is_poor(self, small_dataset):
        from skelgen.synthdata import load_sequence

        s = load_sequence(small_dataset, small_dataset.split("test")[0].seq_id)
        G = init_state(TrainConfig(seed=0)).G
        frames = to_image(generate_sequence(G, s.x, s.S[:3], 0))
        for f, sk in zip(frames, s.S):
            r = refit_skeleton(f, s.appearance, sk, background=s.background())
            assert r.mean_error > 10
