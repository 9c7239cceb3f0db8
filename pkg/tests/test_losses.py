import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from skelgen.losses import (
    EPS,
    LossWeights,
    TripletIndexSet,
    ablation_weights,
    cgan_loss,
    l1_loss,
    sample_triplets,
    total_generator_loss,
    triplet_loss,
)

from oracles import bce_losses, l1, triplet

probs = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=8)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


class TestCGAN:
    def test_paper_defaults(self):
        w = LossWeights()
        assert (w.lambda_, w.beta, w.alpha) == (100.0, 1.0, 0.2)

    def test_half_half(self):
        ld, lg = cgan_loss([0.5], [0.5])
        assert float(ld) == pytest.approx(2 * math.log(2), rel=1e-12)
        assert float(lg) == pytest.approx(math.log(2), rel=1e-12)

    def test_perfect_discriminator(self):
        ld, lg = cgan_loss([1.0], [0.0])
        assert float(ld) == pytest.approx(-2 * math.log(1 - EPS), abs=1e-12)
        assert float(lg) == pytest.approx(-math.log(EPS), rel=1e-9)
        assert math.isfinite(float(lg))

    def test_fooled_discriminator_limits(self):
        ld, lg = cgan_loss([0.0], [1.0])
        assert float(ld) == pytest.approx(-2 * math.log(EPS), rel=1e-9)
        assert float(lg) == pytest.approx(-math.log(1 - EPS), abs=1e-12)

    @pytest.mark.parametrize("bad", [[-0.1], [1.1], [float("nan")]])
    def test_out_of_range(self, bad):
        with pytest.raises(ValueError, match="real"):
            cgan_loss(bad, [0.5])
        with pytest.raises(ValueError, match="fake"):
            cgan_loss([0.5], bad)

    @given(probs, probs)
    def test_matches_hand_evaluation(self, real, fake):
        ld, lg = cgan_loss(real, fake)
        rd, rg = bce_losses(real, fake)
        assert rel(float(ld), rd) < 1e-6
        assert rel(float(lg), rg) < 1e-6


class TestL1:
    def test_constant_shift(self):
        y = torch.zeros(2, 3, 4, 4)
        assert float(l1_loss(y, y + 0.25)) == pytest.approx(0.25)

    def test_identical_is_zero(self):
        y = torch.rand(2, 3, 4, 4)
        assert float(l1_loss(y, y.clone())) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            l1_loss(torch.zeros(2, 3), torch.zeros(3, 2))

    @given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=8))
    def test_matches_hand_evaluation(self, pairs):
        a, b = zip(*pairs)
        assert float(l1_loss(np.array(a), np.array(b))) == pytest.approx(l1(a, b), rel=1e-6, abs=1e-12)


class TestTriplets:
    def test_two_pixel_hinge_active(self):
        frames = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 0.0]])
        T = TripletIndexSet((0,), pos_offset=1, neg_offset=2)
        assert float(triplet_loss(frames, T, 0.2)) == pytest.approx(3.2, rel=1e-12)

    def test_two_pixel_margin_satisfied(self):
        frames = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
        T = TripletIndexSet((0,), pos_offset=1, neg_offset=2)
        assert float(triplet_loss(frames, T, 0.2)) == 0.0

    def test_zero_distance_anchor_positive(self):
        frames = np.array([[0.1, 0.0], [0.1, 0.0], [0.3, 0.0]])
        T = TripletIndexSet((0,), 1, 2)
        assert float(triplet_loss(frames, T, 0.2)) == pytest.approx(0.2 - 0.04, rel=1e-9)

    def test_hinge_exactly_at_zero(self):
        # d_ap - d_an + alpha == 0 exactly: contributes nothing
        frames = np.array([[0.0], [0.5], [0.75]])  # 0.25 - 0.5625 + 0.3125
        T = TripletIndexSet((0,), 1, 2)
        assert float(triplet_loss(frames, T, 0.3125)) == 0.0

    def test_divided_by_m(self):
        frames = np.array([[0.0], [0.0], [0.0], [0.0], [0.0]])
        T = TripletIndexSet((0, 1, 2), 1, 2)
        assert float(triplet_loss(frames, T, 0.2)) == pytest.approx(0.2)

    def test_squared_l2_over_flattened_pixels(self):
        a = np.zeros((1, 2, 2))
        p = np.full((1, 2, 2), 0.5)
        n = np.zeros((1, 2, 2))
        T = TripletIndexSet((0,), 1, 2)
        assert float(triplet_loss(np.stack([a, p, n]), T, 0.0)) == pytest.approx(4 * 0.25)

    def test_sample_prefix_of_permutation(self):
        T = sample_triplets(16, 11, 1, 5, seed=3)
        assert sorted(T.anchors) == list(range(11))
        assert all(n < 16 for n in T.negatives)

    def test_sample_valid_indices(self):
        T = sample_triplets(20, 4, 1, 5, seed=0)
        for a, p, n in T.triples():
            assert p == a + 1 and n == a + 5 and n < 20
        assert len(set(T.anchors)) == 4

    def test_sample_deterministic(self):
        assert sample_triplets(30, 7, seed=9) == sample_triplets(30, 7, seed=9)

    def test_too_short(self):
        with pytest.raises(ValueError, match="at least 6 frames"):
            sample_triplets(5, 1, 1, 5)

    def test_too_many(self):
        with pytest.raises(ValueError, match="anchors"):
            sample_triplets(8, 4, 1, 5)

    @pytest.mark.parametrize("offs", [(0, 5), (5, 5), (6, 5)])
    def test_bad_offsets(self, offs):
        with pytest.raises(ValueError, match="offset"):
            sample_triplets(20, 1, *offs)

    @given(
        st.lists(st.lists(st.floats(-1, 1), min_size=2, max_size=2), min_size=6, max_size=8),
        st.floats(0, 1),
        st.integers(0, 100),
    )
    def test_matches_hand_evaluation(self, frames, alpha, seed):
        n = len(frames)
        T = sample_triplets(n, n - 5, 1, 5, seed)
        got = float(triplet_loss(np.array(frames), T, alpha))
        want = triplet(frames, T.triples(), alpha)
        assert got == pytest.approx(want, rel=1e-6, abs=1e-12)


class TestTotal:
    def test_weighted_sum(self):
        w = LossWeights(lambda_=100, beta=1, alpha=0.2)
        t = total_generator_loss(torch.tensor(0.7), torch.tensor(0.01), torch.tensor(0.3), w)
        assert float(t) == pytest.approx(0.7 + 1.0 + 0.3)

    def test_beta_zero_drops_triplet(self):
        w = ablation_weights("L1+G")
        t = total_generator_loss(torch.tensor(0.7), torch.tensor(0.01), torch.tensor(1e6), w)
        assert float(t) == pytest.approx(1.7)

    def test_ablation_presets(self):
        assert ablation_weights("L1") == LossWeights(adv=0.0, beta=0.0)
        assert ablation_weights("G") == LossWeights(lambda_=0.0, beta=0.0)
        assert ablation_weights("L1+G+T") == LossWeights()
        with pytest.raises(ValueError, match="unknown"):
            ablation_weights("T")

    def test_non_finite_named(self):
        with pytest.raises(FloatingPointError, match="loss_l1"):
            total_generator_loss(torch.tensor(0.1), torch.tensor(float("nan")), torch.tensor(0.0), LossWeights())

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError, match="beta"):
            LossWeights(beta=-1)
