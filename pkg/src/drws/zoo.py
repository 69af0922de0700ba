"""Seeded benchmark families: NNLS, random strongly convex QPs,
oscillating-masses control, and synthetic factor-model portfolios.

Every generator is a pure function of (knobs, seed): fixed data comes from
the stream ``SeedSequence((seed, 0))`` and sample ``i``'s parameter from
``SeedSequence((seed, 1, i))``, so datasets are bitwise reproducible and
parallelizable over samples.  Equality constraints (dynamics, budget) are
encoded as paired inequalities to stay inside the single-cone standard
form; the overhead is accepted at desk scale.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InfeasibleStartError
from .qp import ParametricFamily

FAMILY_IDS = ("nnls", "random_qp", "osc_masses", "portfolio")


@dataclass
class FamilySpec:
    """Family identifier, seed, and size knobs for a generator."""

    family: str
    seed: int = 0
    knobs: dict = field(default_factory=dict)


def make_family(spec: FamilySpec) -> ParametricFamily:
    """Dispatch a :class:`FamilySpec` to its generator."""
    if spec.family not in FAMILY_IDS:
        raise ConfigError(f"unknown family id {spec.family!r}; known: {FAMILY_IDS}")
    gen = {
        "nnls": gen_nnls,
        "random_qp": gen_random_qp,
        "osc_masses": gen_osc_masses,
        "portfolio": gen_portfolio,
    }[spec.family]
    try:
        return gen(seed=spec.seed, **spec.knobs)
    except TypeError as exc:
        raise ConfigError(f"bad knobs for family {spec.family!r}: {exc}") from exc


def _fixed_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, 0)))


def gen_nnls(
    rows: int = 25,
    cols: int = 50,
    theta_low: float = 0.0,
    theta_high: float = 10.0,
    seed: int = 0,
) -> ParametricFamily:
    """min ||A x - theta||^2 s.t. x >= 0, lifted to standard form.

    ``A`` is a fixed standard-normal (rows, cols) matrix and the target
    vector is the parameter.  The lift is P = 2 A^T A (rank-deficient when
    rows < cols, deliberately exercising the averaged-operator regime),
    c = -2 A^T theta, and x >= 0 as -x + s = 0.
    """
    rng = _fixed_rng(seed)
    A = rng.standard_normal((rows, cols))
    P = 2.0 * A.T @ A
    AtT2 = 2.0 * A.T
    corner = np.full(rows, max(abs(theta_low), abs(theta_high)))
    return ParametricFamily(
        family_id="nnls",
        P=P,
        A=-np.eye(cols),
        c_of=lambda t: -(AtT2 @ t),
        b_of=lambda t: np.zeros(cols),
        d=rows,
        sampler=lambda r: r.uniform(theta_low, theta_high, rows),
        seed=seed,
        rho2=float(np.linalg.norm(corner)),
        averaged_regime=rows < cols,
        meta={
            "rows": rows,
            "cols": cols,
            "theta_low": theta_low,
            "theta_high": theta_high,
            "data_matrix": A,
        },
    )


def gen_random_qp(
    n: int = 20,
    m: int = 30,
    lam_min: float = 1.0,
    g_scale: float = 1.0,
    seed: int = 0,
) -> ParametricFamily:
    """Strongly convex test family with strictly feasible right-hand sides.

    P = G^T G + lam_min I with fixed G, A, c; the parameter is
    b = A x0 + s0 with x0 uniform in [-1, 1]^n and s0 uniform in
    [0.1, 1.1]^m, so every instance is strictly feasible by construction.
    """
    if lam_min <= 0:
        raise ValueError("lam_min must be positive for strong convexity")
    rng = _fixed_rng(seed)
    G = g_scale * rng.standard_normal((n, n)) / np.sqrt(n)
    P = G.T @ G + lam_min * np.eye(n)
    A = rng.standard_normal((m, n)) / np.sqrt(n)
    c = rng.standard_normal(n)

    def sampler(r: np.random.Generator) -> np.ndarray:
        return A @ r.uniform(-1.0, 1.0, n) + r.uniform(0.1, 1.1, m)

    # Coordinatewise interval bound on b over the sampling box; its corner
    # norm upper-bounds sup ||theta|| as the bound calculators require.
    row_abs = np.abs(A).sum(axis=1)
    corner = np.maximum(np.abs(-row_abs + 0.1), np.abs(row_abs + 1.1))
    return ParametricFamily(
        family_id="random_qp",
        P=P,
        A=A,
        c_of=lambda t: c.copy(),
        b_of=lambda t: t.copy(),
        d=m,
        sampler=sampler,
        seed=seed,
        rho2=float(np.linalg.norm(corner)),
        averaged_regime=False,
        meta={"n": n, "m": m, "lam_min": lam_min},
    )


def _chain_matrices(masses: int, dt: float, damping: float):
    """Forward-Euler discretization of the wall-to-wall spring-mass chain.

    Unit masses and spring constants; actuator j pushes mass 2j and pulls
    mass 2j+1.  State is (positions, velocities).
    """
    K = -2.0 * np.eye(masses)
    K += np.diag(np.ones(masses - 1), 1) + np.diag(np.ones(masses - 1), -1)
    nu = masses // 2
    Bf = np.zeros((masses, nu))
    for j in range(nu):
        Bf[2 * j, j] = 1.0
        Bf[2 * j + 1, j] = -1.0
    nx = 2 * masses
    A = np.zeros((nx, nx))
    A[:masses, :masses] = np.eye(masses)
    A[:masses, masses:] = dt * np.eye(masses)
    A[masses:, :masses] = dt * K
    A[masses:, masses:] = (1.0 - dt * damping) * np.eye(masses)
    B = np.zeros((nx, nu))
    B[masses:] = dt * Bf
    return A, B


def gen_osc_masses(
    masses: int = 4,
    horizon: int = 10,
    dt: float = 0.5,
    damping: float = 2.0,
    u_max: float = 0.5,
    x_max: float = 2.0,
    pos_init: float = 0.75,
    vel_init: float = 0.4,
    seed: int = 0,
    strict_feasibility: bool = True,
) -> ParametricFamily:
    """Finite-horizon control of a spring-mass chain, condensed to one QP.

    The decision vector stacks (x_1..x_T, u_0..u_{T-1}); dynamics rows are
    paired inequalities and all states and inputs carry box bounds.  Unit
    state and input costs give P = 2 I.  The parameter is the initial
    state, sampled uniformly with position half-width ``pos_init`` and
    velocity half-width ``vel_init``.

    The chain model is a reconstruction (velocity damping added so the
    forward-Euler discretization is stable).  With ``strict_feasibility``
    the init box is certified at construction: the uncontrolled rollout of
    every initial state in the box stays inside the state bounds, so u = 0
    is a feasibility certificate for every sampled instance.  The
    paper-scale preset disables the certificate and may contain infeasible
    instances.
    """
    A, B = _chain_matrices(masses, dt, damping)
    nx, nu = A.shape[0], B.shape[1]
    T = horizon
    nvar = T * nx + T * nu
    hw = np.concatenate([np.full(masses, pos_init), np.full(masses, vel_init)])
    if np.any(hw > x_max):
        raise ValueError("init box exceeds the state bounds")
    if strict_feasibility:
        # Exact per-coordinate sup of the uncontrolled rollout over the box:
        # max_{|x0| <= hw} |(A^t x0)_i| = (|A^t| hw)_i.
        worst = float(hw.max())
        At = np.eye(nx)
        for _ in range(T):
            At = A @ At
            worst = max(worst, float((np.abs(At) @ hw).max()))
        if worst > x_max:
            raise ValueError(
                f"init box not certified feasible: uncontrolled rollout bound "
                f"{worst:.3f} exceeds x_max={x_max}; shrink pos_init/vel_init"
            )

    # Equality block E w = e(theta): x_{t+1} - A x_t - B u_t = 0, x_0 fixed.
    E = np.zeros((T * nx, nvar))
    for t in range(T):
        rows = slice(t * nx, (t + 1) * nx)
        E[rows, t * nx : (t + 1) * nx] = np.eye(nx)
        if t >= 1:
            E[rows, (t - 1) * nx : t * nx] = -A
        E[rows, T * nx + t * nu : T * nx + (t + 1) * nu] = -B
    box = np.concatenate([np.full(T * nx, x_max), np.full(T * nu, u_max)])
    A_ineq = np.vstack([E, -E, np.eye(nvar), -np.eye(nvar)])

    def b_of(theta: np.ndarray) -> np.ndarray:
        e = np.zeros(T * nx)
        e[:nx] = A @ theta
        return np.concatenate([e, -e, box, box])

    def sampler(r: np.random.Generator) -> np.ndarray:
        return np.concatenate(
            [r.uniform(-pos_init, pos_init, masses), r.uniform(-vel_init, vel_init, masses)]
        )

    def validator(theta: np.ndarray) -> None:
        if np.abs(theta).max() > x_max:
            raise InfeasibleStartError(
                f"initial state magnitude {np.abs(theta).max():.3f} exceeds "
                f"state bound {x_max}"
            )

    return ParametricFamily(
        family_id="osc_masses",
        P=2.0 * np.eye(nvar),
        A=A_ineq,
        c_of=lambda t: np.zeros(nvar),
        b_of=b_of,
        d=nx,
        sampler=sampler,
        seed=seed,
        rho2=float(np.linalg.norm(hw)),
        averaged_regime=False,
        theta_validator=validator,
        meta={
            "masses": masses,
            "horizon": T,
            "dt": dt,
            "damping": damping,
            "u_max": u_max,
            "x_max": x_max,
            "pos_init": pos_init,
            "vel_init": vel_init,
            "nx": nx,
            "nu": nu,
            "A_dyn": A,
            "B_dyn": B,
        },
    )


def osc_masses_paper_preset(seed: int = 0) -> ParametricFamily:
    """The paper-scale system (36 states, 9 inputs, horizon 50).

    Provided for completeness; the init box is not certified feasible, so
    individual instances may be unsolvable.
    """
    warnings.warn(
        "paper-scale oscillating-masses preset is not certified feasible",
        RuntimeWarning,
        stacklevel=2,
    )
    return gen_osc_masses(
        masses=18,
        horizon=50,
        dt=0.5,
        u_max=0.5,
        x_max=2.0,
        pos_init=2.0,
        vel_init=2.0,
        seed=seed,
        strict_feasibility=False,
    )


def gen_portfolio(
    assets: int = 30,
    factors: int = 5,
    rho: float = 1.0,
    mu_noise: float = 0.01,
    seed: int = 0,
) -> ParametricFamily:
    """Long-only budget-constrained portfolio with a factor-model risk.

    Sigma = F Sigma_F F^T + D with seeded synthetic factor loadings and a
    positive diagonal idiosyncratic term, so the objective is strongly
    convex.  The parameter is the expected-return vector mu, drawn as a
    fixed base plus truncated Gaussian noise (clipped at three sigma to
    keep the parameter support compact).  Risk-adjusted return
    maximization maps to P = 2 Sigma, c = -rho mu.
    """
    rng = _fixed_rng(seed)
    F = 0.1 * rng.standard_normal((assets, factors))
    raw = rng.standard_normal((factors, factors))
    sigma_f = raw @ raw.T / factors + 0.1 * np.eye(factors)
    D = rng.uniform(0.05, 0.15, assets)
    sigma = F @ sigma_f @ F.T + np.diag(D)
    mu0 = rng.uniform(0.0, 0.03, assets)
    ones = np.ones(assets)
    A_ineq = np.vstack([ones, -ones, -np.eye(assets)])
    b_ineq = np.concatenate([[1.0], [-1.0], np.zeros(assets)])

    def sampler(r: np.random.Generator) -> np.ndarray:
        noise = np.clip(
            r.normal(0.0, mu_noise, assets), -3.0 * mu_noise, 3.0 * mu_noise
        )
        return mu0 + noise

    corner = np.abs(mu0) + 3.0 * mu_noise
    return ParametricFamily(
        family_id="portfolio",
        P=2.0 * sigma,
        A=A_ineq,
        c_of=lambda t: -rho * t,
        b_of=lambda t: b_ineq.copy(),
        d=assets,
        sampler=sampler,
        seed=seed,
        rho2=float(np.linalg.norm(corner)),
        averaged_regime=False,
        meta={
            "assets": assets,
            "factors": factors,
            "rho": rho,
            "mu_noise": mu_noise,
            "sigma": sigma,
            "mu0": mu0,
        },
    )


def _json_knobs(meta: dict) -> dict:
    return {k: v for k, v in meta.items() if not isinstance(v, np.ndarray)}


def write_dataset(
    path,
    family: ParametricFamily,
    thetas: np.ndarray,
    targets: np.ndarray | None = None,
    extra_header: dict | None = None,
) -> None:
    """Write the JSON-lines dataset: one header line, then one theta per line."""
    header = {
        "family": family.family_id,
        "seed": family.seed,
        "knobs": _json_knobs(family.meta),
        "count": int(np.asarray(thetas).shape[0]),
        "d": family.d,
    }
    if extra_header:
        header.update(extra_header)
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i, theta in enumerate(np.asarray(thetas, dtype=np.float64)):
            row = {"theta": theta.tolist()}
            if targets is not None:
                row["target"] = np.asarray(targets[i], dtype=np.float64).tolist()
            fh.write(json.dumps(row) + "\n")


def read_dataset(path) -> tuple[dict, np.ndarray, np.ndarray | None]:
    """Read a JSON-lines dataset; returns (header, thetas, targets or None)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ConfigError(f"dataset {path} is empty")
    header = json.loads(lines[0])
    thetas, targets = [], []
    for line in lines[1:]:
        row = json.loads(line)
        thetas.append(row["theta"])
        if "target" in row:
            targets.append(row["target"])
    thetas = np.asarray(thetas, dtype=np.float64)
    if targets and len(targets) != len(thetas):
        raise ConfigError(f"dataset {path} mixes rows with and without targets")
    return header, thetas, (np.asarray(targets) if targets else None)
