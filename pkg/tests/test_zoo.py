"""Family generators: correctness against oracles, determinism, dataset I/O."""

import numpy as np
import pytest

from drws import engine, qp, zoo
from drws.errors import ConfigError, InfeasibleStartError

from oracles import active_set_qp, projected_gradient_nnls


def _solve(fam, theta, tol=1e-10, max_iters=100_000):
    sys = fam.lcp(theta)
    return engine.solve(sys, np.zeros(sys.dim), engine.SolveSettings(tol=tol, max_iters=max_iters))


class TestNnls:
    def test_zero_target_gives_zero_solution(self):
        fam = zoo.gen_nnls(seed=1)
        trace = _solve(fam, np.zeros(25))
        np.testing.assert_allclose(trace.x, np.zeros(50), atol=1e-7)

    def test_matches_projected_gradient_oracle(self):
        fam = zoo.gen_nnls(seed=0)
        thetas = fam.sample_thetas(3)
        x_pg = projected_gradient_nnls(fam.meta["data_matrix"], thetas.T)
        # Positive fit residual: the minimizer is unique, so solutions are
        # comparable pointwise (zero-residual data matrices admit a whole
        # polyhedron of minimizers).
        fits = ((fam.meta["data_matrix"] @ x_pg - thetas.T) ** 2).sum(axis=0)
        assert fits.min() > 1e-6
        for i, theta in enumerate(thetas):
            trace = _solve(fam, theta)
            assert np.linalg.norm(trace.x - x_pg[:, i]) <= 1e-5

    def test_same_seed_identical_data_matrix(self):
        a = zoo.gen_nnls(seed=3).meta["data_matrix"]
        b = zoo.gen_nnls(seed=3).meta["data_matrix"]
        assert a.tobytes() == b.tobytes()

    def test_lift_matches_expected_formulas(self):
        fam = zoo.gen_nnls(seed=4)
        A = fam.meta["data_matrix"]
        theta = fam.sample_thetas(1)[0]
        inst = fam.instantiate(theta)
        np.testing.assert_allclose(inst.P, 2.0 * A.T @ A, rtol=1e-15)
        np.testing.assert_allclose(inst.c, -2.0 * A.T @ theta, rtol=1e-15)
        np.testing.assert_array_equal(inst.A, -np.eye(50))
        np.testing.assert_array_equal(inst.b, np.zeros(50))

    def test_flags(self):
        fam = zoo.gen_nnls()
        assert fam.averaged_regime and fam.shared_factorization
        assert fam.rho2 == pytest.approx(10.0 * np.sqrt(25.0))


class TestRandomQp:
    def test_instances_solve_without_divergence(self):
        fam = zoo.gen_random_qp(seed=5)
        for theta in fam.sample_thetas(5):
            trace = _solve(fam, theta, tol=1e-9, max_iters=5000)
            assert trace.termination == "tolerance"
            res = qp.kkt_residuals(fam.instantiate(theta), trace.x, trace.y, trace.s)
            assert max(res) <= 1e-7

    def test_zero_g_gives_identity_p(self):
        fam = zoo.gen_random_qp(n=4, m=3, lam_min=1.0, g_scale=0.0, seed=6)
        np.testing.assert_array_equal(fam.P, np.eye(4))

    def test_contractive_beta(self):
        fam = zoo.gen_random_qp(seed=7)
        for theta in fam.sample_thetas(3):
            sys = fam.lcp(theta)
            beta = engine.estimate_beta(sys, [np.zeros(sys.dim)])
            assert beta < 1.0 - 1e-6


class TestOscMasses:
    def test_zero_initial_state_has_zero_solution(self):
        fam = zoo.gen_osc_masses(seed=8)
        trace = _solve(fam, np.zeros(8), tol=1e-10, max_iters=50_000)
        obj = trace.x @ fam.P @ trace.x / 2.0
        assert np.linalg.norm(trace.x) <= 1e-6 and obj <= 1e-12

    def test_dynamics_rows_encode_residual(self):
        fam = zoo.gen_osc_masses(seed=9)
        Ad, Bd = fam.meta["A_dyn"], fam.meta["B_dyn"]
        T, nx, nu = fam.meta["horizon"], fam.meta["nx"], fam.meta["nu"]
        rng = np.random.default_rng(10)
        w = rng.standard_normal(T * nx + T * nu)
        theta = fam.sample_thetas(1)[0]
        inst = fam.instantiate(theta)
        lhs = inst.A[: T * nx] @ w - inst.b[: T * nx]
        xs = [theta] + [w[t * nx : (t + 1) * nx] for t in range(T)]
        us = [w[T * nx + t * nu : T * nx + (t + 1) * nu] for t in range(T)]
        for t in range(T):
            expected = xs[t + 1] - Ad @ xs[t] - Bd @ us[t]
            np.testing.assert_allclose(lhs[t * nx : (t + 1) * nx], expected, atol=1e-12)

    def test_matches_active_set_oracle(self):
        fam = zoo.gen_osc_masses(seed=11)
        Ad, Bd = fam.meta["A_dyn"], fam.meta["B_dyn"]
        T, nx, nu = fam.meta["horizon"], fam.meta["nx"], fam.meta["nu"]
        nvar = T * nx + T * nu
        for theta in fam.sample_thetas(2):
            trace = _solve(fam, theta, tol=1e-10, max_iters=50_000)
            E = fam.A[: T * nx].copy()
            e = fam.b_of(theta)[: T * nx]
            G = np.vstack([np.eye(nvar), -np.eye(nvar)])
            h = np.concatenate(
                [
                    np.full(T * nx, fam.meta["x_max"]),
                    np.full(T * nu, fam.meta["u_max"]),
                ]
                * 2
            )
            w0 = np.zeros(nvar)
            xt = theta.copy()
            for t in range(T):
                xt = Ad @ xt
                w0[t * nx : (t + 1) * nx] = xt
            x_as = active_set_qp(fam.P, np.zeros(nvar), E, e, G, h, w0)
            assert np.linalg.norm(trace.x - x_as) <= 1e-6

    def test_infeasible_start_rejected(self):
        fam = zoo.gen_osc_masses(seed=12)
        bad = np.full(8, 3.0)
        with pytest.raises(InfeasibleStartError):
            fam.instantiate(bad)

    def test_uncertifiable_box_rejected(self):
        with pytest.raises(ValueError, match="not certified"):
            zoo.gen_osc_masses(pos_init=2.0, vel_init=2.0)

    def test_paper_preset_constructs_with_warning(self):
        with pytest.warns(RuntimeWarning):
            fam = zoo.osc_masses_paper_preset()
        assert fam.d == 36 and fam.meta["nu"] == 9 and fam.meta["horizon"] == 50


class TestPortfolio:
    def test_simplex_constraints_at_convergence(self):
        fam = zoo.gen_portfolio(seed=13)
        for theta in fam.sample_thetas(3):
            trace = _solve(fam, theta, tol=1e-9, max_iters=50_000)
            assert abs(trace.x.sum() - 1.0) <= 1e-6
            assert trace.x.min() >= -1e-6

    def test_two_asset_closed_form(self):
        # min x' Sigma x - rho mu' x on the simplex with Sigma = I and
        # mu = (1, 0): x1 = min(1, (2 + rho) / 4).
        rho = 4.0
        inst = qp.make_instance(
            2.0 * np.eye(2),
            np.vstack([np.ones(2), -np.ones(2), -np.eye(2)]),
            -rho * np.array([1.0, 0.0]),
            np.array([1.0, -1.0, 0.0, 0.0]),
            np.array([1.0, 0.0]),
        )
        sys = qp.build_lcp(inst)
        trace = engine.solve(sys, np.zeros(sys.dim), engine.SolveSettings(tol=1e-11))
        x1 = min(1.0, (2.0 + rho) / 4.0)
        np.testing.assert_allclose(trace.x, [x1, 1.0 - x1], atol=1e-8)

    def test_sigma_symmetric_psd(self):
        fam = zoo.gen_portfolio(assets=10, factors=3, seed=14)
        sigma = fam.meta["sigma"]
        np.testing.assert_allclose(sigma, sigma.T, atol=1e-14)
        assert np.linalg.eigvalsh(sigma)[0] > 0


class TestDatasets:
    def test_round_trip(self, tmp_path):
        fam = zoo.gen_nnls(seed=15)
        thetas = fam.sample_thetas(7)
        path = tmp_path / "data.jsonl"
        zoo.write_dataset(path, fam, thetas)
        header, back, targets = zoo.read_dataset(path)
        assert header["family"] == "nnls" and header["count"] == 7
        np.testing.assert_array_equal(back, thetas)
        assert targets is None

    def test_round_trip_with_targets(self, tmp_path):
        fam = zoo.gen_random_qp(seed=16)
        thetas = fam.sample_thetas(4)
        targets = np.arange(4 * fam.dim, dtype=float).reshape(4, fam.dim)
        path = tmp_path / "data.jsonl"
        zoo.write_dataset(path, fam, thetas, targets)
        _, back, t_back = zoo.read_dataset(path)
        np.testing.assert_array_equal(t_back, targets)

    def test_regeneration_is_byte_identical(self, tmp_path):
        for i, name in enumerate(["a.jsonl", "b.jsonl"]):
            fam = zoo.gen_portfolio(seed=17)
            zoo.write_dataset(tmp_path / name, fam, fam.sample_thetas(5))
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_make_family_rejects_unknown_id(self):
        with pytest.raises(ConfigError):
            zoo.make_family(zoo.FamilySpec(family="nope"))

    def test_make_family_rejects_bad_knobs(self):
        with pytest.raises(ConfigError):
            zoo.make_family(zoo.FamilySpec(family="nnls", knobs={"bogus": 1}))
