import logging

import numpy as np
import pytest

from groupdistil import (
    ConfigError,
    GroupLossVector,
    KdConfig,
    ShapeError,
    cross_entropy,
    group_distil_loss,
    kd_loss,
    kl_div,
    one_hot,
    softmax_tau,
)

LN2 = 0.6931471805599453
# -(0.5 ln 0.25 + 0.5 ln 0.75), high-precision scalar evaluation
CE_HALF_QUARTER = 0.8369882167858358
# 0.5 ln 2 + 0.5 ln(2/3)
KL_HALF_QUARTER = 0.14384103622589046


def row_entropy(p):
    terms = np.where(p > 0, p * np.log(np.maximum(p, 1e-300)), 0.0)
    return -terms.sum(axis=1)


class TestSoftmaxTau:
    def test_symmetric_row_is_uniform(self):
        for tau in (0.5, 1.0, 4.0):
            p = softmax_tau(np.array([[0.0, 0.0, 0.0]]), tau)
            np.testing.assert_allclose(p, [[1 / 3] * 3], atol=1e-15)

    def test_ln2_row(self):
        p = softmax_tau(np.array([[LN2, 0.0]]), 1.0)
        np.testing.assert_allclose(p, [[2 / 3, 1 / 3]], atol=1e-15)

    def test_huge_logits_no_overflow(self):
        p = softmax_tau(np.array([[1000.0, 1000.0]]), 1.0)
        np.testing.assert_allclose(p, [[0.5, 0.5]], atol=0)

    def test_shift_invariance_exact_for_representable_shifts(self):
        # tau=4 divides exactly (power of two), so integer logits plus an
        # integer shift reproduce bit-identical probabilities.
        logits = np.array([[1.0, -3.0, 2.0], [0.0, 5.0, -1.0]])
        for tau in (1.0, 4.0):
            base = softmax_tau(logits, tau)
            shifted = softmax_tau(logits + 256.0, tau)
            assert np.array_equal(base, shifted)

    def test_shift_invariance_general(self, rng):
        logits = rng.normal(size=(8, 5)) * 3
        shifts = rng.normal(size=(8, 1)) * 50
        np.testing.assert_allclose(
            softmax_tau(logits, 2.5),
            softmax_tau(logits + shifts, 2.5),
            rtol=1e-13, atol=1e-15,
        )

    def test_rows_are_stochastic(self, rng):
        p = softmax_tau(rng.normal(size=(20, 6)) * 10, 3.0)
        assert (p >= 0).all() and (p <= 1).all()
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)

    def test_entropy_monotone_in_tau(self, rng):
        logits = rng.normal(size=(100, 5)) * 4
        taus = [0.5, 1.0, 2.0, 4.0, 16.0, 256.0]
        previous = None
        for tau in taus:
            h = row_entropy(softmax_tau(logits, tau))
            if previous is not None:
                assert (h >= previous - 1e-12).all()
            previous = h
        # and the limit is uniform
        np.testing.assert_allclose(
            softmax_tau(logits, 1e9), np.full((100, 5), 0.2), atol=1e-8
        )

    def test_bad_tau_rejected(self):
        with pytest.raises(ConfigError):
            softmax_tau(np.zeros((1, 2)), 0.0)
        with pytest.raises(ConfigError):
            softmax_tau(np.zeros((1, 2)), -1.0)


class TestCrossEntropy:
    def test_perfect_one_hot_prediction_is_zero(self):
        target = one_hot([0], 2)
        assert abs(cross_entropy(target, np.array([[1.0, 0.0]]))) < 1e-9

    def test_uniform_prediction_is_ln2(self):
        assert cross_entropy(one_hot([0], 2), np.array([[0.5, 0.5]])) == pytest.approx(
            LN2, abs=1e-15
        )

    def test_soft_target_value(self):
        value = cross_entropy(np.array([[0.5, 0.5]]), np.array([[0.25, 0.75]]))
        assert value == pytest.approx(CE_HALF_QUARTER, abs=1e-15)

    def test_mean_over_batch(self):
        target = one_hot([0, 0], 2)
        pred = np.array([[0.5, 0.5], [1.0, 0.0]])
        assert cross_entropy(target, pred) == pytest.approx(LN2 / 2, abs=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            cross_entropy(one_hot([0], 2), np.zeros((1, 3)))


class TestKlDiv:
    def test_identical_distributions_zero_exactly(self):
        p = np.array([[0.3, 0.7]])
        assert kl_div(p, p) == 0.0

    def test_one_hot_against_uniform(self):
        assert kl_div(one_hot([1], 2), np.array([[0.5, 0.5]])) == pytest.approx(
            LN2, abs=1e-15
        )

    def test_soft_pair_value(self):
        value = kl_div(np.array([[0.5, 0.5]]), np.array([[0.25, 0.75]]))
        assert value == pytest.approx(KL_HALF_QUARTER, abs=1e-15)

    def test_nonnegative_on_random_pairs(self, rng):
        for _ in range(1000):
            cols = int(rng.integers(2, 6))
            p = rng.dirichlet(np.ones(cols)).reshape(1, -1)
            q = rng.dirichlet(np.ones(cols)).reshape(1, -1)
            assert kl_div(p, q) >= 0.0

    def test_cross_entropy_identity(self, rng):
        # H(p, q) = KL(p, q) + H(p)
        for _ in range(200):
            cols = int(rng.integers(2, 7))
            p = rng.dirichlet(np.ones(cols) * 2, size=3)
            q = rng.dirichlet(np.ones(cols), size=3)
            lhs = cross_entropy(p, q)
            rhs = kl_div(p, q) + cross_entropy(p, p)
            assert lhs == pytest.approx(rhs, abs=1e-12)


def scratch_eq1(labels, student_logits, teacher_probs, alpha, tau):
    """Term-by-term re-evaluation of the combined loss, written
    independently of the library primitives."""
    z = np.asarray(student_logits, dtype=float)
    n = z.shape[0]

    def sm(logits, temperature):
        scaled = logits / temperature
        scaled = scaled - scaled.max(axis=1, keepdims=True)
        e = np.exp(scaled)
        return e / e.sum(axis=1, keepdims=True)

    hard = sm(z, 1.0)
    ce = 0.0
    for i in range(n):
        for c in range(z.shape[1]):
            if labels[i, c] > 0:
                ce -= labels[i, c] * np.log(hard[i, c])
    ce /= n
    soft = sm(z, tau)
    kl = 0.0
    for i in range(n):
        for c in range(z.shape[1]):
            if teacher_probs[i, c] > 0:
                kl += teacher_probs[i, c] * (
                    np.log(teacher_probs[i, c]) - np.log(soft[i, c])
                )
    kl /= n
    return (1 - alpha) * ce + alpha * tau**2 * kl


class TestKdLoss:
    def test_alpha_zero_is_exactly_cross_entropy_and_ignores_teacher(self, rng):
        logits = rng.normal(size=(4, 3))
        labels = one_hot(rng.integers(0, 3, size=4), 3)
        cfg = KdConfig(alpha=0.0, tau=4.0)
        expected = cross_entropy(labels, softmax_tau(logits, 1.0))
        for teacher in (None, np.full((4, 3), 1 / 3), np.zeros((9, 9))):
            loss, _ = kd_loss(labels, logits, teacher, cfg)
            assert loss == expected

    def test_alpha_one_matched_teacher_is_zero(self, rng):
        logits = rng.normal(size=(5, 4))
        labels = one_hot(rng.integers(0, 4, size=5), 4)
        cfg = KdConfig(alpha=1.0, tau=3.0)
        teacher = softmax_tau(logits, cfg.tau)
        loss, grad = kd_loss(labels, logits, teacher, cfg)
        assert loss == 0.0
        assert np.array_equal(grad, np.zeros_like(grad))

    def test_paper_default_settings_match_scratch_evaluation(self, rng):
        cfg = KdConfig(alpha=0.9, tau=4.0)
        logits = rng.normal(size=(2, 3)) * 2
        labels = one_hot([2, 0], 3)
        teacher = softmax_tau(rng.normal(size=(2, 3)), cfg.tau)
        loss, _ = kd_loss(labels, logits, teacher, cfg)
        assert loss == pytest.approx(
            scratch_eq1(labels, logits, teacher, 0.9, 4.0), abs=1e-12
        )

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 5))
            cols = int(rng.integers(2, 5))
            alpha = float(rng.uniform(0, 1))
            tau = float(rng.uniform(0.5, 6.0))
            cfg = KdConfig(alpha=alpha, tau=tau)
            logits = rng.normal(size=(n, cols)) * 2
            labels = one_hot(rng.integers(0, cols, size=n), cols)
            teacher = rng.dirichlet(np.ones(cols), size=n)
            _, grad = kd_loss(labels, logits, teacher, cfg)
            eps = 1e-6
            for i in range(n):
                for c in range(cols):
                    bumped = logits.copy()
                    bumped[i, c] += eps
                    plus, _ = kd_loss(labels, bumped, teacher, cfg)
                    bumped[i, c] -= 2 * eps
                    minus, _ = kd_loss(labels, bumped, teacher, cfg)
                    fd = (plus - minus) / (2 * eps)
                    rel = abs(grad[i, c] - fd) / max(1e-12, abs(grad[i, c]) + abs(fd))
                    assert rel < 1e-7

    def test_one_hot_teacher_reduces_to_cross_entropy_for_all_alpha(self, rng):
        logits = rng.normal(size=(6, 3)) * 3
        labels = one_hot(rng.integers(0, 3, size=6), 3)
        expected = cross_entropy(labels, softmax_tau(logits, 1.0))
        for alpha in (0.0, 0.25, 0.5, 0.75, 0.9, 1.0):
            loss, _ = kd_loss(labels, logits, labels, KdConfig(alpha=alpha, tau=1.0))
            assert loss == pytest.approx(expected, abs=1e-12)

    def test_teacher_required_when_alpha_positive(self, rng):
        labels = one_hot([0], 2)
        with pytest.raises(ConfigError):
            kd_loss(labels, np.zeros((1, 2)), None, KdConfig(alpha=0.5, tau=1.0))

    def test_shape_mismatch(self):
        labels = one_hot([0, 1], 2)
        with pytest.raises(ShapeError):
            kd_loss(labels, np.zeros((2, 3)), None, KdConfig(alpha=0.0, tau=1.0))
        with pytest.raises(ShapeError):
            kd_loss(labels, np.zeros((2, 2)), np.zeros((3, 2)), KdConfig(0.5, 1.0))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            KdConfig(alpha=-0.1, tau=1.0)
        with pytest.raises(ConfigError):
            KdConfig(alpha=1.5, tau=1.0)
        with pytest.raises(ConfigError):
            KdConfig(alpha=0.5, tau=0.0)


class TestGroupDistilLoss:
    def test_uniform_weights_equal_losses(self):
        per_group = GroupLossVector(losses=[1.0, 1.0, 1.0, 1.0], counts=[5, 5, 5, 5])
        assert group_distil_loss(per_group, [0.25] * 4) == pytest.approx(1.0, abs=1e-15)

    def test_vertex_weight_selects_one_group(self):
        per_group = GroupLossVector(losses=[3.0, 7.0, 1.0, 9.0], counts=[1, 1, 1, 1])
        assert group_distil_loss(per_group, [1.0, 0.0, 0.0, 0.0]) == 3.0

    def test_hand_dot_product(self):
        per_group = GroupLossVector(losses=[4.0, 3.0, 2.0, 1.0], counts=[2, 2, 2, 2])
        value = group_distil_loss(per_group, [0.1, 0.2, 0.3, 0.4])
        assert value == pytest.approx(2.0, abs=1e-15)

    def test_empty_groups_contribute_zero_and_are_flagged(self, caplog):
        per_group = GroupLossVector(losses=[4.0, 99.0, 2.0, 1.0], counts=[2, 0, 2, 2])
        with caplog.at_level(logging.WARNING, logger="groupdistil.losses"):
            value = group_distil_loss(per_group, [0.25] * 4)
        assert value == pytest.approx(0.25 * (4.0 + 2.0 + 1.0), abs=1e-15)
        assert "1" in caplog.text

    def test_length_mismatch(self):
        per_group = GroupLossVector(losses=[1.0, 2.0], counts=[1, 1])
        with pytest.raises(ShapeError):
            group_distil_loss(per_group, [0.5, 0.25, 0.25])
