"""Exact reverse-mode differentiation of the residual loss through k steps.

Each splitting step, as a function of its input ``z`` with solve operator
``F = (M + I)^{-1}``, pre-projection ``v = 2 F (z - q) - z`` and diagonal
projection mask ``D`` (ones on the first n coordinates, indicator of
``v_j > 0`` on the last m), has Jacobian

    J = I + D (2 F - I) - F.

The loss ``l(z_k) = ||u~' - u'||`` seen through one extra step has local
Jacobian ``D'(2F - I) - F`` (no identity term), so the gradient with
respect to the warm start is

    grad = J_1^T ... J_k^T (D'(2F - I) - F)^T  r / l,

with ``r = u~' - u'``.  Transposed applications use the cached transpose
solve: ``J^T g = g - D g + F^T (2 D g - g)``.  The subderivative of the
projection at exactly zero is taken as zero, and a loss at numerical zero
is reported as an error rather than a zero gradient (the norm is not
differentiable there and a silent zero would freeze training on already
solved samples).  The derivation is spelled out in ``docs/adjoint.md`` and
is test-backed by a finite-difference oracle.

Tapes are per-sample and independent; batch variants process many columns
against one factorization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .engine import dr_step, dr_step_batch
from .errors import NonFiniteIterateError, ZeroLossGradientError
from .qp import LCPSystem

ZERO_LOSS_TOL = 1e-14


@dataclass
class UnrollTape:
    """Per-iteration records ``(z^i, u^{i+1}, v^{i+1})`` for i = 0..k-1.

    Re-running the step from any stored ``z^i`` reproduces the stored
    ``u``/``v`` bitwise; the tape holds everything the adjoint consumes.
    """

    zs: np.ndarray  # (k, n+m) step inputs
    us: np.ndarray  # (k, n+m) resolvent outputs
    vs: np.ndarray  # (k, n+m) pre-projection vectors
    k: int
    z_k: np.ndarray
    loss: float


def forward_tape(
    sys: LCPSystem, z0, k: int
) -> tuple[UnrollTape, np.ndarray, float]:
    """Run ``k`` steps recording the tape; identical arithmetic to ``run_k``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    z = linalg.as_vector(z0, sys.dim).copy()
    zs = np.empty((k, sys.dim))
    us = np.empty((k, sys.dim))
    vs = np.empty((k, sys.dim))
    for i in range(k):
        zs[i] = z
        z_next, u, _ = dr_step(sys, z)
        us[i] = u
        vs[i] = 2.0 * u - z
        z = z_next
    _, u, u_tilde = dr_step(sys, z)
    loss = float(np.linalg.norm(u_tilde - u))
    tape = UnrollTape(zs=zs, us=us, vs=vs, k=k, z_k=z, loss=loss)
    return tape, z, loss


def _mask(v: np.ndarray, n: int) -> np.ndarray:
    d = np.ones_like(v)
    d[n:] = (v[n:] > 0.0).astype(np.float64)
    return d


def backward(sys: LCPSystem, tape: UnrollTape) -> np.ndarray:
    """Gradient of the loss with respect to the warm start ``z^0``.

    Consumes only tape contents (plus one extra step at ``z_k`` for the
    seed); deterministic for identical inputs.
    """
    if tape.loss <= ZERO_LOSS_TOL:
        raise ZeroLossGradientError(
            f"loss {tape.loss:.3e} at or below {ZERO_LOSS_TOL:.0e}; gradient undefined"
        )
    fact, n = sys.factorization, sys.n
    _, u, u_tilde = dr_step(sys, tape.z_k)
    r = u_tilde - u
    g = r / tape.loss
    # Seed map (D'(2F - I) - F)^T g = F^T (2 D'g - g) - D'g.
    d = _mask(2.0 * u - tape.z_k, n)
    y = d * g
    g = linalg.solve_transpose(fact, 2.0 * y - g) - y
    # Step adjoints J_i^T g = g - D_i g + F^T (2 D_i g - g), i = k..1.
    for i in range(tape.k - 1, -1, -1):
        d = _mask(tape.vs[i], n)
        y = d * g
        g = g - y + linalg.solve_transpose(fact, 2.0 * y - g)
    if not np.isfinite(g).all():
        raise NonFiniteIterateError("adjoint recursion produced non-finite entries")
    return g


def loss_gradient(sys: LCPSystem, z0, k: int) -> tuple[float, np.ndarray]:
    """Convenience wrapper: forward tape plus backward pass."""
    tape, _, loss = forward_tape(sys, z0, k)
    return loss, backward(sys, tape)


def gradient_norm_decay(
    sys: LCPSystem, z0, k_grid
) -> list[tuple[int, float]]:
    """Gradient norms of the unrolled loss across a grid of depths.

    On contractive (strongly convex) instances the norms decay
    geometrically in k; on merely averaged instances the decay is
    sub-geometric and the output is informational.
    """
    out = []
    for k in k_grid:
        _, grad = loss_gradient(sys, z0, int(k))
        out.append((int(k), float(np.linalg.norm(grad))))
    return out


@dataclass
class BatchTape:
    """Columnwise tape: pre-projection stacks plus the seed step at ``Z_k``."""

    vs: np.ndarray  # (k, n+m, N)
    v_last: np.ndarray  # (n+m, N) pre-projection of the extra step
    r_last: np.ndarray  # (n+m, N) residual vectors u~' - u'
    losses: np.ndarray  # (N,)
    z_k: np.ndarray  # (n+m, N)


def forward_tape_batch(
    fact: linalg.LUFactorization, n: int, Q: np.ndarray, Z0: np.ndarray, k: int
) -> BatchTape:
    """Batched forward pass retaining what the batched adjoint needs."""
    if k < 1:
        raise ValueError("k must be at least 1")
    Z = np.array(Z0, dtype=np.float64, copy=True)
    vs = np.empty((k,) + Z.shape)
    for i in range(k):
        Z, _, _, V = dr_step_batch(fact, n, Q, Z)
        vs[i] = V
    _, U, Ut, V = dr_step_batch(fact, n, Q, Z)
    R = Ut - U
    losses = np.linalg.norm(R, axis=0)
    if not (np.isfinite(Z).all() and np.isfinite(losses).all()):
        finite = np.isfinite(Z).all(axis=0) & np.isfinite(losses)
        raise NonFiniteIterateError(
            f"non-finite forward pass in batch column {int(np.flatnonzero(~finite)[0])}"
        )
    return BatchTape(vs=vs, v_last=V, r_last=R, losses=losses, z_k=Z)


def backward_batch(
    fact: linalg.LUFactorization, n: int, tape: BatchTape
) -> tuple[np.ndarray, np.ndarray]:
    """Batched adjoint; returns ``(G, skipped)``.

    Columns whose loss is at numerical zero are skipped: their gradient
    columns are zero and flagged in the boolean ``skipped`` mask so callers
    can exclude them from a step.
    """
    skipped = tape.losses <= ZERO_LOSS_TOL
    safe = np.where(skipped, 1.0, tape.losses)
    G = tape.r_last / safe
    G[:, skipped] = 0.0

    def masked(V: np.ndarray, G: np.ndarray) -> np.ndarray:
        Y = G.copy()
        Y[n:] *= (V[n:] > 0.0).astype(np.float64)
        return Y

    Y = masked(tape.v_last, G)
    G = linalg.solve_transpose(fact, 2.0 * Y - G) - Y
    for i in range(tape.vs.shape[0] - 1, -1, -1):
        Y = masked(tape.vs[i], G)
        G = G - Y + linalg.solve_transpose(fact, 2.0 * Y - G)
    G[:, skipped] = 0.0
    return G, skipped
