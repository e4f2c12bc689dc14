"""Tests for the BPR loss, pruning regularizer, and gamma schedule."""

import numpy as np
import pytest

from cerp.losses import LossConfig, bpr_loss, bpr_terms, gamma_at_epoch, prune_regularizer, total_loss

LN2 = 0.6931471805599453  # ln 2
LN_1P_EINV = 0.3132616875182228  # ln(1 + e^-1)
TANH1_SQ = 0.5800256583859739  # tanh(1)^2


class TestBprLoss:
    def test_equal_scores(self):
        loss, gp, gn = bpr_loss(1.7, 1.7)
        assert loss == pytest.approx(LN2, abs=1e-15)
        assert gp == pytest.approx(-0.5) and gn == pytest.approx(0.5)

    def test_unit_margin(self):
        loss, _, _ = bpr_loss(2.0, 1.0)
        assert loss == pytest.approx(LN_1P_EINV, abs=1e-15)

    def test_huge_margin_saturates_without_overflow(self):
        loss, gp, gn = bpr_loss(1e6, 0.0)
        assert loss == 0.0
        assert gp == 0.0 and gn == 0.0

    def test_huge_negative_margin(self):
        loss, gp, gn = bpr_loss(0.0, 1e6)
        assert loss == pytest.approx(1e6, rel=1e-12)
        assert gp == pytest.approx(-1.0) and gn == pytest.approx(1.0)

    def test_strictly_decreasing_in_margin(self):
        x = np.linspace(-30, 30, 500)
        loss, dx = bpr_terms(x)
        assert (np.diff(loss) < 0).all()
        assert (dx < 0).all()

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-10, 10, size=200)
        _, dx = bpr_terms(x)
        h = 1e-6
        fd = (bpr_terms(x + h)[0] - bpr_terms(x - h)[0]) / (2 * h)
        np.testing.assert_allclose(dx, fd, rtol=1e-4, atol=1e-10)


class TestPruneRegularizer:
    def test_zero_embedding(self):
        val, grad = prune_regularizer(np.zeros((1, 3)), eta=100.0)
        assert val == 0.0
        np.testing.assert_array_equal(grad, np.zeros((1, 3)))

    def test_counts_large_entries(self):
        val, _ = prune_regularizer(np.array([[0.5, 0.0, -0.3]]), eta=100.0)
        assert abs(val - (-2.0)) < 1e-6

    def test_partial_entry(self):
        val, _ = prune_regularizer(np.array([[0.01]]), eta=100.0)
        assert val == pytest.approx(-TANH1_SQ, abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        e = rng.uniform(-0.2, 0.2, size=(4, 5))
        eta = 100.0
        _, grad = prune_regularizer(e, eta)
        h = 1e-5
        for idx in np.ndindex(e.shape):
            ep, em = e.copy(), e.copy()
            ep[idx] += h
            em[idx] -= h
            fd = (prune_regularizer(ep, eta)[0] - prune_regularizer(em, eta)[0]) / (2 * h)
            # saturated tanh: near-zero gradient on both sides, compare absolutely
            ok = abs(grad[idx] - fd) <= 1e-8 or (
                abs(grad[idx] - fd) / max(abs(grad[idx]), abs(fd)) < 1e-4
            )
            assert ok, (idx, grad[idx], fd)

    def test_smooth_nonzero_counter(self):
        # entries either exactly 0 or with |e| >= 0.05: -value ~ nonzero count
        rng = np.random.default_rng(2)
        e = rng.uniform(0.05, 1.0, size=400) * rng.choice([-1.0, 1.0], size=400)
        e[rng.random(400) < 0.4] = 0.0
        val, _ = prune_regularizer(e, eta=100.0)
        count = np.count_nonzero(e)
        assert abs(-val - count) <= 1e-3 * max(count, 1)
        # per-entry correspondence
        t2 = np.tanh(100.0 * e) ** 2
        assert np.abs(t2 - (e != 0)).max() <= 1e-3


class TestGammaSchedule:
    def test_initial(self):
        assert gamma_at_epoch(LossConfig(gamma0=1e-2), 0) == 1e-2

    def test_halving(self):
        assert gamma_at_epoch(LossConfig(gamma0=1e-2), 3) == pytest.approx(1.25e-3)

    def test_decay_disabled(self):
        cfg = LossConfig(gamma0=1e-2, gamma_decay=False)
        assert gamma_at_epoch(cfg, 17) == 1e-2

    def test_validation(self):
        with pytest.raises(ValueError):
            LossConfig(gamma0=1.5)
        with pytest.raises(ValueError):
            LossConfig(gamma0=0.1, eta=0.0)
        with pytest.raises(ValueError):
            gamma_at_epoch(LossConfig(gamma0=0.1), -1)


class TestTotalLoss:
    def test_regularizer_off(self):
        assert total_loss(1.234, -99.0, 0.0) == 1.234

    def test_hand_composite(self):
        # one triplet at equal scores plus a zero-embedding regularizer term
        loss, _, _ = bpr_loss(0.3, 0.3)
        reg, _ = prune_regularizer(np.zeros((1, 4)), eta=100.0)
        assert total_loss(loss, reg, 1.0) == pytest.approx(LN2, abs=1e-15)

    def test_bpr_additivity(self):
        single, _, _ = bpr_loss(0.9, 0.2)
        batch, _ = bpr_terms(np.full(13, 0.7))
        assert batch.sum() == pytest.approx(13 * single, rel=1e-12)
