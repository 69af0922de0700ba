"""Douglas-Rachford splitting on the complementarity system.

One iteration from ``z`` is

    u      = (M + I)^{-1} (z - q)          (cached LU solve)
    u~     = proj_C(2 u - z)               (clip the last m entries at 0)
    z_next = z + u~ - u,

i.e. ``z_next = T(z)``.  The fixed-point residual ``||T(z) - z||_2`` is both
the convergence measure and the training loss; an approximate primal-dual
solution is recovered as ``(x, y) = (M + I)^{-1}(z - q)`` and ``s = b - Ax``.

Solves own their state; many may run concurrently against one shared
read-only system.  Batched variants iterate many columns at once against a
shared factorization with per-column ``q`` vectors.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import (
    DimensionMismatchError,
    DivergenceError,
    EstimationFailedError,
    NonFiniteIterateError,
)
from .qp import LCPSystem

BETA_CLAMP = 1.0 - 1e-12
BETA_TAIL_FRACTION = 0.2
BETA_DIST_FLOOR = 1e-9


@dataclass
class SolveSettings:
    """Iteration controls for :func:`solve`.

    ``divergence_threshold`` of ``None`` means ``1e8 * (1 + ||z0||)``,
    resolved when the solve starts.  KKT residuals are recorded every
    ``kkt_stride`` iterations to bound their overhead.
    """

    max_iters: int = 10000
    tol: float = 1e-9
    divergence_threshold: float | None = None
    kkt_stride: int = 10

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class DRTrace:
    """Record of one splitting run: final iterate, residuals, and solution."""

    z: np.ndarray
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    fp_residuals: np.ndarray
    kkt_checkpoints: list[tuple[int, float, float, float, float]]
    iterations: int
    termination: str
    iterates: np.ndarray | None = field(default=None, repr=False)


def project_cone(v, n: int, m: int) -> np.ndarray:
    """Project onto R^n x R_+^m: keep the first n entries, clip the last m."""
    v = linalg.as_vector(v, n + m)
    out = v.copy()
    out[n:] = np.maximum(out[n:], 0.0)
    return out


def dr_step(sys: LCPSystem, z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One splitting step; returns ``(z_next, u, u_tilde)``.

    ``z_next - z`` equals ``u_tilde - u`` by construction; no separate
    residual path exists.
    """
    z = linalg.as_vector(z, sys.dim)
    u = linalg.solve(sys.factorization, z - sys.q)
    u_tilde = project_cone(2.0 * u - z, sys.n, sys.m)
    z_next = z + (u_tilde - u)
    if not np.isfinite(z_next).all():
        raise NonFiniteIterateError("splitting step produced non-finite entries")
    return z_next, u, u_tilde


def fixed_point_residual(sys: LCPSystem, z) -> float:
    """||T(z) - z||_2, computed as ||u_tilde - u|| from one step."""
    _, u, u_tilde = dr_step(sys, z)
    return float(np.linalg.norm(u_tilde - u))


def run_k(sys: LCPSystem, z0, k: int) -> tuple[np.ndarray, float]:
    """Apply ``k`` steps from ``z0``; return ``(z_k, loss)``.

    The loss is the fixed-point residual at ``z_k`` (one extra step).
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    z = linalg.as_vector(z0, sys.dim).copy()
    for _ in range(k):
        z, _, _ = dr_step(sys, z)
    return z, fixed_point_residual(sys, z)


def recover_solution(sys: LCPSystem, z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Primal-dual recovery ``(x, y) = (M+I)^{-1}(z - q)``, ``s = b - A x``."""
    z = linalg.as_vector(z, sys.dim)
    u = linalg.solve(sys.factorization, z - sys.q)
    x, y = u[: sys.n], u[sys.n :]
    A = -sys.M[sys.n :, : sys.n]
    s = sys.q[sys.n :] - A @ x
    return x, y, s


def kkt_residuals_lcp(sys: LCPSystem, x, y, s) -> tuple[float, float, float, float]:
    """KKT residuals computed from the blocks of ``(M, q)``."""
    n = sys.n
    P = sys.M[:n, :n]
    A = -sys.M[n:, :n]
    c, b = sys.q[:n], sys.q[n:]
    primal = float(np.linalg.norm(A @ x + s - b))
    dual = float(np.linalg.norm(P @ x + A.T @ y + c))
    comp = float(abs(s @ y))
    cone = float(np.linalg.norm(np.minimum(s, 0.0)) + np.linalg.norm(np.minimum(y, 0.0)))
    return primal, dual, comp, cone


def solve(
    sys: LCPSystem,
    z0,
    settings: SolveSettings | None = None,
    keep_iterates: bool = False,
) -> DRTrace:
    """Iterate until the fixed-point residual falls at or below the tolerance.

    Raises :class:`DivergenceError` when the residual exceeds the divergence
    threshold, which on valid (solvable) data cannot happen and therefore
    signals infeasible, unbounded, or corrupted inputs.
    """
    settings = settings or SolveSettings()
    z = linalg.as_vector(z0, sys.dim).copy()
    threshold = settings.divergence_threshold
    if threshold is None:
        threshold = 1e8 * (1.0 + float(np.linalg.norm(z)))
    residuals: list[float] = []
    checkpoints: list[tuple[int, float, float, float, float]] = []
    history = [z.copy()] if keep_iterates else None
    termination = "max_iters"
    it = 0
    for it in range(1, settings.max_iters + 1):
        z, u, u_tilde = dr_step(sys, z)
        r = float(np.linalg.norm(u_tilde - u))
        residuals.append(r)
        if history is not None:
            history.append(z.copy())
        if r > threshold:
            raise DivergenceError(
                f"residual {r:.3e} exceeded divergence threshold {threshold:.3e} "
                f"at iteration {it}"
            )
        if it % settings.kkt_stride == 0:
            xc, yc, sc = recover_solution(sys, z)
            checkpoints.append((it, *kkt_residuals_lcp(sys, xc, yc, sc)))
        if r <= settings.tol:
            termination = "tolerance"
            break
    x, y, s = recover_solution(sys, z)
    if not checkpoints or checkpoints[-1][0] != it:
        checkpoints.append((it, *kkt_residuals_lcp(sys, x, y, s)))
    return DRTrace(
        z=z,
        x=x,
        y=y,
        s=s,
        fp_residuals=np.asarray(residuals),
        kkt_checkpoints=checkpoints,
        iterations=it,
        termination=termination,
        iterates=np.asarray(history) if history is not None else None,
    )


def estimate_beta(
    sys: LCPSystem, probes, settings: SolveSettings | None = None
) -> float:
    """Estimate the linear contraction factor toward the fixed-point set.

    Each probe is solved to tolerance 1e-10 and its final iterate serves as
    that probe's fixed-point proxy (for rank-deficient problems the
    fixed-point set need not be a singleton, so the proxy is per-probe).
    The estimate is the largest distance ratio over the tail window (the
    last 20% of iterates still farther than 1e-9 from the proxy), maximized
    over probes and clamped below 1.  Probes already at a fixed point
    contribute nothing; if none yields a valid window the estimate fails.
    """
    base = settings or SolveSettings()
    tight = SolveSettings(
        max_iters=base.max_iters,
        tol=1e-10,
        divergence_threshold=base.divergence_threshold,
        kkt_stride=base.kkt_stride,
    )
    best = 0.0
    any_valid = False
    for z0 in probes:
        trace = solve(sys, z0, tight, keep_iterates=True)
        z_inf = trace.z
        dists = np.linalg.norm(trace.iterates - z_inf, axis=1)
        valid = [i for i in range(len(dists) - 1) if dists[i] > BETA_DIST_FLOOR]
        if not valid:
            continue
        tail = valid[-max(1, math.ceil(BETA_TAIL_FRACTION * len(valid))) :]
        ratios = [dists[i + 1] / dists[i] for i in tail]
        best = max(best, max(ratios))
        any_valid = True
    if not any_valid:
        raise EstimationFailedError("no probe iterate inside the valid window")
    return float(min(max(best, 1e-16), BETA_CLAMP))


def trace_to_csv(trace: DRTrace, fileobj) -> None:
    """Write per-iteration residuals with KKT columns filled at checkpoints."""
    kkt = {it: vals for (it, *vals) in trace.kkt_checkpoints}
    writer = csv.writer(fileobj, lineterminator="\n")
    writer.writerow(["iter", "fp_residual", "kkt_primal", "kkt_dual", "kkt_comp", "kkt_cone"])
    for i, r in enumerate(trace.fp_residuals, start=1):
        row = [i, repr(float(r))]
        row += [repr(v) for v in kkt[i]] if i in kkt else ["", "", "", ""]
        writer.writerow(row)


# Batched variants: iterate N columns at once against one factorization,
# with per-column q vectors (families here share M across parameters).


def dr_step_batch(
    fact: linalg.LUFactorization, n: int, Q: np.ndarray, Z: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized step over columns; returns ``(Z_next, U, U_tilde, V)``.

    ``V = 2 U - Z`` is the pre-projection matrix whose sign pattern drives
    the adjoint's projection masks.
    """
    U = linalg.solve(fact, Z - Q)
    V = 2.0 * U - Z
    Ut = V.copy()
    Ut[n:] = np.maximum(Ut[n:], 0.0)
    Z_next = Z + (Ut - U)
    return Z_next, U, Ut, V


def run_k_batch(
    fact: linalg.LUFactorization, n: int, Q: np.ndarray, Z0: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Apply ``k`` steps to every column; return ``(Z_k, losses)``."""
    Z = np.array(Z0, dtype=np.float64, copy=True)
    for _ in range(k):
        Z, _, _, _ = dr_step_batch(fact, n, Q, Z)
    _, U, Ut, _ = dr_step_batch(fact, n, Q, Z)
    losses = np.linalg.norm(Ut - U, axis=0)
    if not (np.isfinite(Z).all() and np.isfinite(losses).all()):
        finite = np.isfinite(Z).all(axis=0) & np.isfinite(losses)
        raise NonFiniteIterateError(
            f"non-finite iterate in batch column {int(np.flatnonzero(~finite)[0])}"
        )
    return Z, losses


def solve_batch(
    fact: linalg.LUFactorization,
    n: int,
    Q: np.ndarray,
    Z0: np.ndarray,
    tol: float,
    max_iters: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Iterate all columns until each meets ``tol`` (or ``max_iters``).

    Returns ``(Z_final, iters, residuals)`` where ``iters[j]`` is the first
    iteration whose residual fell at or below ``tol`` for column ``j``
    (``max_iters`` if never) and ``residuals`` has shape
    ``(iterations_run, N)`` with each column frozen after convergence.
    """
    Z = np.array(Z0, dtype=np.float64, copy=True)
    if Z.ndim != 2 or Q.shape != Z.shape:
        raise DimensionMismatchError("Q and Z0 must be matching 2-d arrays")
    ncols = Z.shape[1]
    active = np.ones(ncols, dtype=bool)
    iters = np.full(ncols, max_iters, dtype=int)
    rows: list[np.ndarray] = []
    last_res = np.zeros(ncols)
    for it in range(1, max_iters + 1):
        idx = np.flatnonzero(active)
        Zn, U, Ut, _ = dr_step_batch(fact, n, Q[:, idx], Z[:, idx])
        if not np.isfinite(Zn).all():
            raise NonFiniteIterateError(f"non-finite iterate at iteration {it}")
        res = np.linalg.norm(Ut - U, axis=0)
        Z[:, idx] = Zn
        last_res[idx] = res
        rows.append(last_res.copy())
        newly = idx[res <= tol]
        iters[newly] = np.minimum(iters[newly], it)
        active[newly] = False
        if not active.any():
            break
    return Z, iters, np.asarray(rows)
