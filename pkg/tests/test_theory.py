import math

import numpy as np
import pytest

from oracles import prob_abs_sum_uniform_le
from perturbed_lth.intervals import IntervalUnion, intersect, measure
from perturbed_lth.theory import (
    check_trajectory,
    expected_growth_check,
    final_phase_check,
    hoeffding_final_bound,
    next_p_tilde,
    predicted_next,
    psi,
    simulate_trajectory,
    surrogate_from_set,
    surrogate_init,
    surrogate_step,
    true_growth_check,
    z_increment,
)


class TestSurrogate:
    def test_init_no_eps(self):
        s = surrogate_init(0.1, 0.0)
        assert s.fhat.isclose(IntervalUnion([-0.1], [0.1]))
        assert not s.extension and s.p_tilde == pytest.approx(0.2)

    def test_init_extension_measure(self):
        assert measure(surrogate_init(0.1, 0.05).extension) == pytest.approx(0.05)
        assert measure(surrogate_init(0.4, 0.5).extension) == pytest.approx(0.2)

    def test_init_domain(self):
        with pytest.raises(ValueError):
            surrogate_init(0.5, 0.0)
        with pytest.raises(ValueError):
            surrogate_init(0.1, -0.1)

    def test_step_example(self):
        s = surrogate_step(surrogate_init(0.1, 0.05), 0.3)
        assert s.fhat.isclose(IntervalUnion.from_list([[-0.1, 0.1], [0.15, 0.4]]))
        assert s.p_tilde == pytest.approx(0.45)
        assert s.k == 1

    def test_zero_shift_adds_extension(self):
        s0 = surrogate_init(0.1, 0.05)
        assert surrogate_step(s0, 0.0).p_tilde == pytest.approx(s0.p_tilde + 0.05)

    def test_step_rejects_large_shift(self):
        with pytest.raises(ValueError):
            surrogate_step(surrogate_init(0.1, 0.0), 1.5)

    def test_state_invariants(self, rng):
        s = surrogate_init(0.01, 0.03)
        for x in rng.uniform(-1, 1, 25):
            s = surrogate_step(s, float(x))
            assert measure(intersect(s.fhat, s.extension)) <= 1e-12
            assert measure(s.extension) == pytest.approx(min(0.03, 1 - s.p_tilde), abs=1e-12)
            assert s.fhat.lo[0] >= -0.5 and s.fhat.hi[-1] <= 0.5

    def test_vectorized_next_matches_steps(self, rng):
        s = surrogate_init(0.02, 0.04)
        for x in rng.uniform(-1, 1, 6):
            s = surrogate_step(s, float(x))
        xs = rng.uniform(-1, 1, 30)
        fast = next_p_tilde(s, xs)
        slow = [surrogate_step(s, float(x)).p_tilde for x in xs]
        np.testing.assert_allclose(fast, slow, atol=1e-12)


class TestGrowth:
    def test_predicted_values(self):
        assert predicted_next(0.2, 0.1) - 0.2 == pytest.approx(0.12)
        assert predicted_next(1.0, 0.3) == 1.0
        assert predicted_next(0.3, 0.0) - 0.3 == pytest.approx(0.5 * 0.7 * 0.3)

    @pytest.mark.parametrize("p,eps", [(0.2, 0.1), (0.5, 0.0), (0.7, 0.2)])
    def test_identity_within_3se(self, p, eps):
        chk = expected_growth_check(surrogate_init(p / 2, eps), draws=50_000, seed=1)
        assert chk.within_3se, chk

    def test_identity_on_fragmented_state(self):
        f = IntervalUnion.from_list([[-0.4, -0.35], [-0.1, 0.05], [0.2, 0.22], [0.4, 0.5]])
        chk = expected_growth_check(surrogate_from_set(f, 0.03), draws=50_000, seed=2)
        assert chk.within_3se, chk

    def test_draws_guard(self):
        with pytest.raises(ValueError):
            expected_growth_check(surrogate_init(0.1, 0.0), draws=10)

    def test_true_coverage_lower_bound(self):
        vals = np.random.default_rng(7).uniform(-1, 1, 5)
        chk = true_growth_check(vals, 0.01, 0.02, draws=20_000, seed=3)
        assert chk.empirical_mean >= chk.predicted - 3 * chk.std_err


class TestTrajectories:
    def test_psi_and_z(self):
        assert psi(0.5, 0.0) == pytest.approx(16 / 6)
        assert math.isfinite(psi(1.0, 0.1))
        assert z_increment(1.0, 1.0, 0.0) is None
        assert z_increment(0.2, 0.3, 0.1) == pytest.approx(0.1 / (0.8 * 0.3))

    def test_record_shapes(self):
        rec = simulate_trajectory(1e-3, 0.01, 30, seed=4)
        assert len(rec.p_tilde) == len(rec.psi) == len(rec.z_increment) == len(rec.p_exact) == 31
        assert rec.z_increment[0] is None
        assert rec.p_exact[24] is not None and rec.p_exact[25] is None

    def test_n_guard(self):
        with pytest.raises(ValueError):
            simulate_trajectory(1e-3, 0.0, 201, seed=0)

    @pytest.mark.parametrize("eps", [0.0, 0.01, 0.1])
    def test_invariants_hold(self, eps):
        for seed in range(8):
            rec = simulate_trajectory(1e-3, eps, 80, seed)
            assert check_trajectory(rec).total == 0

    def test_saturation_at_zero_eps(self):
        done = sum(simulate_trajectory(1e-3, 0.0, 60, s).p_tilde[-1] >= 1 - 1e-12 for s in range(20))
        assert done >= 18

    def test_k1_recorded(self):
        rec = simulate_trajectory(1e-3, 0.0, 60, seed=1)
        assert rec.k1 is not None and rec.p_tilde[rec.k1] > 0.25
        assert all(p <= 0.25 for p in rec.p_tilde[: rec.k1])

    def test_violation_detector_fires(self):
        rec = simulate_trajectory(1e-3, 0.0, 10, seed=0)
        rec.p_tilde[5] = rec.p_tilde[4] - 0.01
        assert check_trajectory(rec).monotone >= 1


class TestFinalPhase:
    def test_rate_above_bound_and_oracle(self):
        rate = final_phase_check(0.2, 0.01, 10, draws=10_000, seed=0)
        bound = hoeffding_final_bound(0.2, 0.01, 10)
        exact = prob_abs_sum_uniform_le(9 * 0.2 + 0.01, 10)
        assert rate >= bound
        assert abs(rate - exact) <= 4 * math.sqrt(exact * (1 - exact) / 10_000)

    def test_large_k3_tends_to_one(self):
        assert final_phase_check(0.2, 0.01, 60, draws=5000, seed=1) > 0.99

    def test_degenerate_eta_equals_eps(self):
        rate = final_phase_check(0.1, 0.1, 5, draws=20_000, seed=2)
        exact = prob_abs_sum_uniform_le(5 * 0.1, 5)
        assert abs(rate - exact) <= 4 * math.sqrt(exact * (1 - exact) / 20_000)

    def test_requires_eps_at_least_eta(self):
        with pytest.raises(ValueError):
            final_phase_check(0.01, 0.1, 5)
