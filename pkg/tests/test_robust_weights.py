import logging

import numpy as np
import pytest

from groupdistil import ConfigError, EgConfig, NumericError, eg_update, init_uniform, snapshot

LN2 = 0.6931471805599453


class TestInitUniform:
    def test_four_domains(self):
        np.testing.assert_array_equal(init_uniform(4), [0.25] * 4)

    def test_single_domain(self):
        np.testing.assert_array_equal(init_uniform(1), [1.0])

    def test_three_domains_sum_renormalized(self):
        w = init_uniform(3)
        np.testing.assert_allclose(w, [1 / 3] * 3, atol=1e-16)
        assert abs(w.sum() - 1.0) <= 1e-12

    def test_zero_domains_rejected(self):
        with pytest.raises(ConfigError):
            init_uniform(0)


class TestEgUpdate:
    def test_zero_loss_is_identity(self):
        w = np.array([0.5, 0.5])
        updated = eg_update(w, 1, 0.0, EgConfig(eta_w=1.0))
        assert np.array_equal(updated, w)

    def test_hand_evaluated_update(self):
        updated = eg_update(np.array([0.5, 0.5]), 0, LN2, EgConfig(eta_w=1.0))
        np.testing.assert_allclose(updated, [2 / 3, 1 / 3], atol=1e-15)

    def test_does_not_mutate_input(self):
        w = np.array([0.5, 0.5])
        eg_update(w, 0, 1.0, EgConfig(eta_w=1.0))
        assert np.array_equal(w, [0.5, 0.5])

    def test_equal_loss_to_every_domain_returns_to_uniform(self, rng):
        cfg = EgConfig(eta_w=0.3)
        for order in (range(4), [2, 0, 3, 1], [3, 2, 1, 0]):
            w = init_uniform(4)
            for d in order:
                w = eg_update(w, d, 1.7, cfg)
            np.testing.assert_allclose(w, [0.25] * 4, atol=1e-12)

    def test_simplex_preserved_under_random_updates(self, rng):
        cfg_choices = [EgConfig(eta_w=e) for e in (0.01, 0.1, 1.0)]
        w = init_uniform(5)
        for _ in range(2000):
            d = int(rng.integers(5))
            loss = float(rng.uniform(0, 10))
            w = eg_update(w, d, loss, cfg_choices[int(rng.integers(3))])
            assert (w >= 0).all()
            assert abs(w.sum() - 1.0) <= 1e-12

    def test_monotone_response_and_limit(self):
        # Only domain 2 sees positive loss; its weight never decreases
        # and approaches 1. Zero-loss updates to other domains are no-ops.
        cfg = EgConfig(eta_w=0.05)
        w = init_uniform(4)
        previous = w[2]
        for _ in range(500):
            for d in range(4):
                w = eg_update(w, d, 2.0 if d == 2 else 0.0, cfg)
            assert w[2] >= previous - 1e-15
            previous = w[2]
        assert w[2] > 0.999

    def test_permutation_of_distinct_domain_updates_commutes(self, rng):
        cfg = EgConfig(eta_w=0.2)
        losses = [0.3, 1.1, 2.7, 0.9]
        final = []
        for order in ([0, 1, 2, 3], [3, 1, 0, 2], [2, 3, 1, 0]):
            w = init_uniform(4)
            for d in order:
                w = eg_update(w, d, losses[d], cfg)
            final.append(w)
        np.testing.assert_allclose(final[0], final[1], atol=1e-12)
        np.testing.assert_allclose(final[0], final[2], atol=1e-12)

    def test_overflow_exponent_clamped_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING, logger="groupdistil.robust_weights"):
            w = eg_update(init_uniform(2), 0, 1e6, EgConfig(eta_w=1.0))
        assert np.isfinite(w).all()
        assert abs(w.sum() - 1.0) <= 1e-12
        assert "clamping" in caplog.text

    def test_non_finite_loss_aborts(self):
        with pytest.raises(NumericError):
            eg_update(init_uniform(3), 1, float("nan"), EgConfig(eta_w=0.1))
        with pytest.raises(NumericError):
            eg_update(init_uniform(3), 1, float("inf"), EgConfig(eta_w=0.1))

    def test_domain_out_of_range(self):
        with pytest.raises(ConfigError):
            eg_update(init_uniform(3), 3, 1.0, EgConfig(eta_w=0.1))

    def test_eta_must_be_nonnegative_finite(self):
        with pytest.raises(ConfigError):
            EgConfig(eta_w=-0.01)
        with pytest.raises(ConfigError):
            EgConfig(eta_w=float("nan"))


class TestSnapshot:
    def test_uniform_snapshot(self):
        assert snapshot(init_uniform(4)) == [0.25, 0.25, 0.25, 0.25]

    def test_snapshot_does_not_alias_live_state(self):
        w = init_uniform(2)
        frozen = snapshot(w)
        w_next = eg_update(w, 0, 3.0, EgConfig(eta_w=1.0))
        w[0] = -99.0
        assert frozen == [0.5, 0.5]
        assert w_next[0] != -99.0

    def test_repeated_snapshots_identical(self):
        w = eg_update(init_uniform(3), 1, 0.7, EgConfig(eta_w=0.5))
        assert snapshot(w) == snapshot(w)
