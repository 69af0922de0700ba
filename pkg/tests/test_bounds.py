"""Warm-start strategies and bound-calculator arithmetic."""

import math

import numpy as np
import pytest

from drws import bounds, engine, nn, qp, zoo
from drws.errors import BadInputsError, EmptyStoreError

from conftest import tiny_qp


class TestWarmStart:
    def test_cold_is_zero(self):
        z = bounds.warm_start(bounds.cold_start(5), np.ones(3))
        np.testing.assert_array_equal(z, np.zeros(5))

    def test_single_pair_store(self):
        store = bounds.nearest_neighbor(np.array([[1.0, 2.0]]), np.array([[9.0, 8.0, 7.0]]))
        z = bounds.warm_start(store, [100.0, -3.0])
        np.testing.assert_array_equal(z, [9.0, 8.0, 7.0])

    def test_tie_broken_toward_lower_index(self):
        store = bounds.nearest_neighbor(
            np.array([[1.0], [-1.0]]), np.array([[10.0], [20.0]])
        )
        np.testing.assert_array_equal(bounds.warm_start(store, [0.0]), [10.0])

    def test_empty_store_rejected(self):
        with pytest.raises(EmptyStoreError):
            bounds.nearest_neighbor(np.zeros((0, 2)), np.zeros((0, 3)))

    def test_learned_uses_model(self):
        model = nn.init_model(d=2, out_dim=3, hidden=(), seed=0, normalize=False)
        strategy = bounds.learned(model)
        theta = np.array([0.5, -0.5])
        np.testing.assert_array_equal(
            bounds.warm_start(strategy, theta), nn.predict(model, theta)
        )


class TestBoundTheorem1:
    def test_frozen_hand_value(self):
        # Independent evaluation of the formula, frozen before wiring it up:
        # 0.2 + 2 sqrt(2) 0.9^10 (2*0.5 + 1*log(20)/200).
        expected = 0.2 + 2 * math.sqrt(2) * 0.9**10 * (1.0 + math.log(20.0) / 200.0)
        inp = bounds.BoundInputs(beta=0.9, k=10, n_samples=100, delta=0.05, b_dist=1.0, rad=0.5)
        value = bounds.bound_theorem1(inp, empirical_risk=0.2)
        assert value == pytest.approx(expected, rel=1e-12)
        assert value == pytest.approx(1.20099, abs=5e-5)

    def test_large_k_collapses_to_empirical_risk(self):
        inp = bounds.BoundInputs(beta=0.9, k=10_000, n_samples=100, delta=0.05, b_dist=1.0, rad=0.5)
        assert bounds.bound_theorem1(inp, 0.2) - 0.2 < 1e-12

    def test_zero_rad_and_b(self):
        inp = bounds.BoundInputs(beta=0.5, k=3, n_samples=10, delta=0.1, b_dist=0.0, rad=0.0)
        assert bounds.bound_theorem1(inp, 0.7) == 0.7

    def test_monotonicity(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            beta = rng.uniform(0.1, 0.99)
            k = int(rng.integers(1, 50))
            n = int(rng.integers(10, 1000))
            delta = rng.uniform(0.01, 0.5)
            b = rng.uniform(0.0, 5.0)
            rad = rng.uniform(0.0, 5.0)
            risk = rng.uniform(0.0, 2.0)
            inp = bounds.BoundInputs(beta=beta, k=k, n_samples=n, delta=delta, b_dist=b, rad=rad)
            base = bounds.bound_theorem1(inp, risk)
            up_rad = bounds.BoundInputs(beta=beta, k=k, n_samples=n, delta=delta, b_dist=b, rad=rad + 1)
            up_b = bounds.BoundInputs(beta=beta, k=k, n_samples=n, delta=delta, b_dist=b + 1, rad=rad)
            deeper = bounds.BoundInputs(beta=beta, k=k + 5, n_samples=n, delta=delta, b_dist=b, rad=rad)
            wider = bounds.BoundInputs(beta=beta, k=k, n_samples=4 * n, delta=delta, b_dist=b, rad=rad)
            assert bounds.bound_theorem1(up_rad, risk) >= base
            assert bounds.bound_theorem1(up_b, risk) >= base
            assert bounds.bound_theorem1(inp, risk + 0.5) >= base
            assert bounds.bound_theorem1(deeper, risk) <= base
            assert bounds.bound_theorem1(wider, risk) <= base

    def test_bad_inputs(self):
        good = dict(beta=0.9, k=1, n_samples=10, delta=0.05, b_dist=1.0, rad=1.0)
        for key, bad in [("beta", 1.5), ("delta", 1.0), ("n_samples", 0), ("b_dist", -1.0)]:
            with pytest.raises(BadInputsError):
                bounds.bound_theorem1(bounds.BoundInputs(**{**good, key: bad}), 0.0)


class TestLinearCorollary:
    def test_quadrupling_n_halves_rad_term(self):
        a = bounds.BoundInputs(beta=0.9, k=5, n_samples=100, delta=0.05, b_dist=0.0, rho2=3.0, d=7)
        b = bounds.BoundInputs(beta=0.9, k=5, n_samples=400, delta=0.05, b_dist=0.0, rho2=3.0, d=7)
        gap_a = bounds.bound_linear_corollary(a, 0.0)
        gap_b = bounds.bound_linear_corollary(b, 0.0)
        assert gap_b == pytest.approx(gap_a / 2.0, rel=1e-12)

    def test_zero_dimension_degenerates(self):
        inp = bounds.BoundInputs(beta=0.9, k=5, n_samples=100, delta=0.05, b_dist=0.0, rho2=3.0, d=0)
        assert bounds.bound_linear_corollary(inp, 0.25) == 0.25

    def test_nnls_rho2_is_box_corner_norm(self):
        fam = zoo.gen_nnls()
        assert fam.rho2 == pytest.approx(10.0 * math.sqrt(25.0), rel=1e-15)

    def test_missing_rho2_rejected(self):
        inp = bounds.BoundInputs(beta=0.9, k=5, n_samples=100, delta=0.05, b_dist=0.0, d=3)
        with pytest.raises(BadInputsError):
            bounds.bound_linear_corollary(inp, 0.0)


class TestAveragedBound:
    def test_c0_hand_value(self):
        # nu = 1/2, k = 3: 1 / sqrt(4 * 1/4) = 1.
        assert bounds.averaged_c0(3, 0.5) == pytest.approx(1.0, rel=1e-15)

    def test_c0_decreasing_in_k(self):
        values = [bounds.averaged_c0(k, 0.5) for k in range(1, 30)]
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_zero_rad_and_b(self):
        inp = bounds.BoundInputs(beta=0.9, k=3, n_samples=10, delta=0.1, b_dist=0.0, rad=0.0)
        assert bounds.bound_averaged(inp, 0.4) == 0.4

    def test_bad_nu(self):
        inp = bounds.BoundInputs(beta=0.9, k=3, n_samples=10, delta=0.1, b_dist=0.0, rad=0.0, nu=1.0)
        with pytest.raises(BadInputsError):
            bounds.bound_averaged(inp, 0.0)


class TestEstimateB:
    def test_exact_predictor_gives_zero(self, tiny_sys):
        fam = zoo.gen_random_qp(n=1, m=1, seed=20)
        # Constant model reproducing the fixed point of the single instance
        # it is queried on: distance estimate collapses to ~0.
        theta = fam.sample_thetas(1)[0]
        sys = fam.lcp(theta)
        z_inf = engine.solve(sys, np.zeros(sys.dim), engine.SolveSettings(tol=1e-12)).z
        model = nn.init_model(d=fam.d, out_dim=fam.dim, hidden=(), seed=0, normalize=False)
        model.weights[0][:] = 0.0
        model.biases[0][:] = z_inf
        b_hat = bounds.estimate_B(bounds.learned(model), fam, theta[None, :])
        assert b_hat <= 1e-8

    def test_cold_start_on_tiny_qp(self):
        # Fixed point of the analytic instance is (1, 1): B = sqrt(2).
        inst = tiny_qp()
        fam = qp.ParametricFamily(
            family_id="tiny", P=inst.P, A=inst.A,
            c_of=lambda t: inst.c.copy(), b_of=lambda t: inst.b.copy(),
            d=1, sampler=lambda rng: np.zeros(1), seed=0,
        )
        b_hat = bounds.estimate_B(bounds.cold_start(2), fam, np.zeros((1, 1)))
        assert b_hat == pytest.approx(math.sqrt(2.0), rel=1e-9)

    def test_nondecreasing_in_samples(self):
        fam = zoo.gen_random_qp(seed=21)
        thetas = fam.sample_thetas(6)
        strategy = bounds.cold_start(fam.dim)
        values = [bounds.estimate_B(strategy, fam, thetas[:i]) for i in (2, 4, 6)]
        assert values[0] <= values[1] <= values[2]


class TestViolationTrials:
    def test_inflated_bound_never_violated(self):
        fam = zoo.gen_random_qp(n=6, m=8, seed=22)
        frac, details = bounds.bound_violation_trial(
            fam, k=5, delta=0.05, trials=3, n_train=40, n_test=20, seed=1,
            fit_samples=20, b_samples=10, beta_samples=2,
        )
        # Inflate rad and B tenfold: slack dominates, zero violations.
        for row in details:
            inp = bounds.BoundInputs(
                beta=row["beta"], k=5, n_samples=40, delta=0.05,
                b_dist=10 * row["B"], rho2=10 * fam.rho2, d=fam.d,
            )
            assert row["test_risk"] <= bounds.bound_linear_corollary(inp, row["empirical_risk"])

    def test_single_trial_fraction_binary(self):
        fam = zoo.gen_random_qp(n=6, m=8, seed=23)
        frac, _ = bounds.bound_violation_trial(
            fam, k=5, delta=0.05, trials=1, n_train=30, n_test=10, seed=2,
            fit_samples=15, b_samples=10, beta_samples=2,
        )
        assert frac in (0.0, 1.0)


def test_report_shape():
    inp = bounds.BoundInputs(
        beta=0.9, k=5, n_samples=100, delta=0.05, b_dist=1.0, rho2=3.0, d=7
    )
    value = bounds.bound_linear_corollary(inp, 0.1)
    report = bounds.bound_report("linear_corollary", inp, 0.1, value, 0.0)
    for key in (
        "bound_kind", "beta", "k", "N", "delta", "B", "rad", "rho2",
        "empirical_risk", "bound_value", "violation_fraction",
    ):
        assert key in report
    assert report["rad"] == pytest.approx(3.0 * math.sqrt(14.0 / 100.0))
