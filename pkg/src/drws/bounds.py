"""Warm-start baselines and numeric generalization-bound evaluation.

Three warm-start strategies: cold (zeros), nearest neighbor (the stored
solution of the closest training parameter), and learned (a predictor
model).  The bound calculators evaluate

  * the contraction-based bound
        risk <= empirical_risk + 2 sqrt(2) beta^k (2 rad + B log(1/delta) / (2N)),
  * its linear-hypothesis-class specialization with
        rad = rho2 sqrt(2 d / N),
  * and the averaged-operator variant
        risk <= empirical_risk + 2 c0 rad + c1 log(2/delta) / (2N),
        c0 = 1 / sqrt((k+1) nu (1-nu)),   c1 = B c0,

with nu = 1/2 for this splitting (resolvent compositions are firmly
nonexpansive).  The averaged constants follow the (1 - nu) form that the
underlying iterate bound derives; B is always a sampled estimate of the
warm-start distance, not a certified supremum, and reports carry that
caveat.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import engine, nn
from .errors import BadInputsError, BadParameterDimensionError, EmptyStoreError
from .qp import ParametricFamily

B_CAVEAT = (
    "B is a sampled estimate of the warm-start distance over the drawn "
    "parameters, not a certified supremum over the parameter support"
)
AVERAGED_CAVEAT = (
    "averaged-operator constants use the (1 - nu) form consistent with the "
    "iterate bound they derive from"
)


@dataclass
class WarmStartStrategy:
    """One of cold / nearest-neighbor / learned, with its backing data."""

    kind: str
    dim: int
    thetas: np.ndarray | None = None
    zs: np.ndarray | None = None
    model: nn.PredictorModel | None = None


def cold_start(dim: int) -> WarmStartStrategy:
    return WarmStartStrategy(kind="cold", dim=dim)


def nearest_neighbor(thetas: np.ndarray, zs: np.ndarray) -> WarmStartStrategy:
    thetas = np.asarray(thetas, dtype=np.float64)
    zs = np.asarray(zs, dtype=np.float64)
    if thetas.shape[0] == 0 or thetas.shape[0] != zs.shape[0]:
        raise EmptyStoreError("nearest-neighbor store must hold matching pairs")
    return WarmStartStrategy(kind="nearest", dim=zs.shape[1], thetas=thetas, zs=zs)


def learned(model: nn.PredictorModel) -> WarmStartStrategy:
    return WarmStartStrategy(kind="learned", dim=model.out_dim, model=model)


def warm_start(strategy: WarmStartStrategy, theta) -> np.ndarray:
    """Initial iterate for one parameter under the given strategy.

    Nearest-neighbor ties are broken toward the smallest stored index.
    """
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    if strategy.kind == "cold":
        return np.zeros(strategy.dim)
    if strategy.kind == "nearest":
        if strategy.thetas is None or strategy.thetas.shape[0] == 0:
            raise EmptyStoreError("nearest-neighbor store is empty")
        if theta.shape != (strategy.thetas.shape[1],):
            raise BadParameterDimensionError(
                f"theta has shape {theta.shape}, store expects "
                f"({strategy.thetas.shape[1]},)"
            )
        dists = np.linalg.norm(strategy.thetas - theta, axis=1)
        return strategy.zs[int(np.argmin(dists))].copy()
    if strategy.kind == "learned":
        return nn.predict(strategy.model, theta)
    raise ValueError(f"unknown strategy kind {strategy.kind!r}")


def warm_start_batch(strategy: WarmStartStrategy, thetas: np.ndarray) -> np.ndarray:
    """Warm starts for an (N, d) block, returned as (dim, N) columns."""
    thetas = np.asarray(thetas, dtype=np.float64)
    if strategy.kind == "learned":
        return nn.predict_batch(strategy.model, thetas)
    return np.stack([warm_start(strategy, t) for t in thetas], axis=1)


@dataclass
class BoundInputs:
    """Quantities entering the bound calculators."""

    beta: float
    k: int
    n_samples: int
    delta: float
    b_dist: float
    rad: float | None = None
    rho2: float | None = None
    d: int | None = None
    nu: float = 0.5


def _check_common(inp: BoundInputs) -> None:
    if not (0.0 < inp.beta < 1.0):
        raise BadInputsError(f"beta must lie in (0, 1), got {inp.beta}")
    if inp.k < 0:
        raise BadInputsError("k must be nonnegative")
    if inp.n_samples < 1:
        raise BadInputsError("n_samples must be at least 1")
    if not (0.0 < inp.delta < 1.0):
        raise BadInputsError(f"delta must lie in (0, 1), got {inp.delta}")
    if inp.b_dist < 0:
        raise BadInputsError("b_dist must be nonnegative")


def bound_theorem1(inp: BoundInputs, empirical_risk: float) -> float:
    """Contraction-based bound with an explicit complexity term."""
    _check_common(inp)
    if inp.rad is None or inp.rad < 0:
        raise BadInputsError("rad must be supplied and nonnegative")
    gap = 2.0 * math.sqrt(2.0) * inp.beta**inp.k * (
        2.0 * inp.rad + inp.b_dist * math.log(1.0 / inp.delta) / (2.0 * inp.n_samples)
    )
    return empirical_risk + gap


def bound_linear_corollary(inp: BoundInputs, empirical_risk: float) -> float:
    """Specialization to linear predictors: rad = rho2 sqrt(2 d / N)."""
    _check_common(inp)
    if inp.rho2 is None or inp.rho2 < 0:
        raise BadInputsError("rho2 must be supplied and nonnegative")
    if inp.d is None or inp.d < 0:
        raise BadInputsError("d must be supplied and nonnegative")
    rad = inp.rho2 * math.sqrt(2.0 * inp.d / inp.n_samples)
    gap = 2.0 * math.sqrt(2.0) * inp.beta**inp.k * (
        2.0 * rad + inp.b_dist * math.log(1.0 / inp.delta) / (2.0 * inp.n_samples)
    )
    return empirical_risk + gap


def averaged_c0(k: int, nu: float) -> float:
    if not (0.0 < nu < 1.0):
        raise BadInputsError(f"nu must lie in (0, 1), got {nu}")
    return 1.0 / math.sqrt((k + 1) * nu * (1.0 - nu))


def bound_averaged(inp: BoundInputs, empirical_risk: float) -> float:
    """Averaged-operator bound: applies without strong convexity."""
    _check_common(inp)
    if inp.rad is None or inp.rad < 0:
        raise BadInputsError("rad must be supplied and nonnegative")
    c0 = averaged_c0(inp.k, inp.nu)
    c1 = inp.b_dist * c0
    return (
        empirical_risk
        + 2.0 * c0 * inp.rad
        + c1 * math.log(2.0 / inp.delta) / (2.0 * inp.n_samples)
    )


def estimate_B(
    strategy: WarmStartStrategy,
    family: ParametricFamily,
    thetas: np.ndarray,
    max_iters: int = 200_000,
) -> float:
    """Sampled warm-start distance bound: max over samples of
    ||warm_start(theta) - z_inf(theta)|| with z_inf solved to 1e-10 seeded
    at the warm start.  An estimate, not a certified supremum.
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    if thetas.shape[0] == 0:
        raise BadInputsError("estimate_B needs at least one sample")
    Z0 = warm_start_batch(strategy, thetas)
    Q = family.q_batch(thetas)
    Z_inf, _, _ = engine.solve_batch(
        family.shared_fact(), family.n, Q, Z0, tol=1e-10, max_iters=max_iters
    )
    return float(np.linalg.norm(Z0 - Z_inf, axis=0).max())


def family_beta(
    family: ParametricFamily,
    thetas: np.ndarray,
    probes_per_instance: int = 1,
    seed: int = 0,
    max_iters: int = 200_000,
) -> float:
    """Max of per-instance contraction estimates over sampled parameters.

    Probes are the cold start plus ``probes_per_instance - 1`` seeded
    random points per instance.
    """
    best = 0.0
    rng = np.random.default_rng(np.random.SeedSequence((seed, 3)))
    for theta in np.asarray(thetas, dtype=np.float64):
        sys = family.lcp(theta)
        probes = [np.zeros(sys.dim)]
        probes += [rng.standard_normal(sys.dim) for _ in range(probes_per_instance - 1)]
        best = max(
            best,
            engine.estimate_beta(
                sys, probes, engine.SolveSettings(max_iters=max_iters)
            ),
        )
    return best


def fit_linear_predictor(
    family: ParametricFamily,
    thetas: np.ndarray,
    targets: np.ndarray,
) -> nn.PredictorModel:
    """Least-squares linear hypothesis h(theta) = W theta (no bias, no
    normalization), mapping parameters to the given fixed-point targets.
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    W, *_ = np.linalg.lstsq(thetas, targets, rcond=None)
    model = nn.init_model(
        d=family.d, out_dim=family.dim, hidden=(), seed=0, normalize=False,
        meta={"family_id": family.family_id, "hypothesis": "linear"},
    )
    model.weights[0][:] = W.T
    model.biases[0][:] = 0.0
    return model


def _trial_seed(seed: int, trial: int, stream: int) -> int:
    return int(np.random.SeedSequence((seed, 4, trial, stream)).generate_state(1)[0])


def bound_violation_trial(
    family: ParametricFamily,
    k: int,
    delta: float,
    trials: int,
    n_train: int = 300,
    n_test: int = 100,
    seed: int = 0,
    beta: float | None = None,
    model: nn.PredictorModel | None = None,
    fit_samples: int = 100,
    b_samples: int = 50,
    beta_samples: int = 5,
) -> tuple[float, list[dict]]:
    """Resampling check of the linear-class bound at confidence 1 - delta.

    Each trial draws fresh train/test parameter sets, fits a linear
    predictor to fixed points of a training subset (or evaluates a fixed
    ``model``), computes the bound from training quantities, and tests
    whether the test risk exceeds it.  Returns the violation fraction and
    per-trial details.  ``beta`` is a family-level quantity and is
    estimated once over the first trial's instances when not supplied.
    """
    if trials < 1:
        raise BadInputsError("trials must be at least 1")
    fact = family.shared_fact()
    violations = 0
    details: list[dict] = []
    for t in range(trials):
        train = family.sample_thetas(n_train, seed=_trial_seed(seed, t, 0))
        test = family.sample_thetas(n_test, seed=_trial_seed(seed, t, 1))
        if beta is None:
            beta = family_beta(family, train[:beta_samples], seed=seed)
        if model is None:
            sub = train[: min(fit_samples, n_train)]
            Q_sub = family.q_batch(sub)
            Z_inf, _, _ = engine.solve_batch(
                fact, family.n, Q_sub, np.zeros((family.dim, sub.shape[0])),
                tol=1e-10, max_iters=200_000,
            )
            hypothesis = fit_linear_predictor(family, sub, Z_inf.T)
        else:
            hypothesis = model
        strategy = learned(hypothesis)
        b_hat = estimate_B(strategy, family, train[: min(b_samples, n_train)])
        Q_train = family.q_batch(train)
        Q_test = family.q_batch(test)
        emp = nn.empirical_risk(fact, family.n, Q_train, hypothesis, train, k)
        test_risk = nn.empirical_risk(fact, family.n, Q_test, hypothesis, test, k)
        inp = BoundInputs(
            beta=beta, k=k, n_samples=n_train, delta=delta, b_dist=b_hat,
            rho2=family.rho2, d=family.d,
        )
        value = bound_linear_corollary(inp, emp)
        violated = test_risk > value
        violations += int(violated)
        details.append(
            {
                "trial": t,
                "empirical_risk": emp,
                "test_risk": test_risk,
                "bound_value": value,
                "B": b_hat,
                "beta": beta,
                "violated": bool(violated),
            }
        )
    return violations / trials, details


def bound_report(
    bound_kind: str,
    inp: BoundInputs,
    empirical_risk: float,
    bound_value: float,
    violation_fraction: float | None = None,
) -> dict:
    """Assemble the documented JSON report shape."""
    rad = inp.rad
    if bound_kind == "linear_corollary":
        rad = inp.rho2 * math.sqrt(2.0 * inp.d / inp.n_samples)
    report = {
        "bound_kind": bound_kind,
        "beta": inp.beta,
        "k": inp.k,
        "N": inp.n_samples,
        "delta": inp.delta,
        "B": inp.b_dist,
        "rad": rad,
        "rho2": inp.rho2,
        "empirical_risk": empirical_risk,
        "bound_value": bound_value,
        "violation_fraction": violation_fraction,
        "caveats": [B_CAVEAT] + ([AVERAGED_CAVEAT] if bound_kind == "averaged" else []),
    }
    return report
