"""Parametric QP instances and their linear-complementarity reformulation.

An instance is

    minimize    (1/2) x^T P x + c^T x
    subject to  A x + s = b,  s >= 0,

with P symmetric positive semidefinite.  Its optimality conditions are
assembled into the complementarity system ``M u + q`` over the cone
``R^n x R_+^m`` with

    M = [[ P, A^T],
         [-A, 0  ]],     q = (c, b),

and ``M + I`` is factorized once for the splitting iteration.  Families fix
whatever data does not vary and map a parameter vector onto full instances,
reusing one cached factorization whenever ``P`` and ``A`` are fixed.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import linalg
from .errors import BadParameterDimensionError, DimensionMismatchError

# Eigenvalue checks cost O(n^3); above this size PSD validation only warns.
PSD_HARD_CHECK_LIMIT = 200
SYMMETRY_ATOL = 1e-10
PSD_EIG_FLOOR = -1e-8


@dataclass(frozen=True)
class QPInstance:
    """One concrete QP plus the parameter vector it was built from."""

    P: np.ndarray
    A: np.ndarray
    c: np.ndarray
    b: np.ndarray
    theta: np.ndarray

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.theta.shape[0]


def make_instance(P, A, c, b, theta, validate: bool = True) -> QPInstance:
    """Build and (optionally) validate a :class:`QPInstance`."""
    P = linalg.as_matrix(P)
    n = P.shape[0]
    A = linalg.as_matrix(A)
    if A.shape[1] != n:
        raise DimensionMismatchError(f"A has {A.shape[1]} columns, expected {n}")
    m = A.shape[0]
    qp = QPInstance(
        P=P,
        A=A,
        c=linalg.as_vector(c, n),
        b=linalg.as_vector(b, m),
        theta=linalg.as_vector(theta),
    )
    if validate:
        validate_instance(qp)
    return qp


def validate_instance(qp: QPInstance) -> None:
    """Check symmetry and positive semidefiniteness of ``P``.

    The eigenvalue check is hard up to ``PSD_HARD_CHECK_LIMIT`` and advisory
    (a warning) above it.
    """
    if qp.P.shape[0] != qp.P.shape[1]:
        raise DimensionMismatchError(f"P must be square, got {qp.P.shape}")
    asym = float(np.abs(qp.P - qp.P.T).max()) if qp.n else 0.0
    if asym > SYMMETRY_ATOL:
        raise ValueError(f"P is not symmetric: max |P - P^T| = {asym:.3e}")
    if qp.n == 0:
        return
    if qp.n <= PSD_HARD_CHECK_LIMIT:
        min_eig = float(np.linalg.eigvalsh(qp.P)[0])
        if min_eig < PSD_EIG_FLOOR:
            raise ValueError(f"P is not positive semidefinite: min eig = {min_eig:.3e}")
    else:
        warnings.warn(
            f"P has n={qp.n} > {PSD_HARD_CHECK_LIMIT}; skipping eigenvalue PSD check",
            RuntimeWarning,
            stacklevel=2,
        )


@dataclass(frozen=True)
class LCPSystem:
    """Assembled complementarity system with a cached factorization of M + I."""

    n: int
    m: int
    M: np.ndarray
    q: np.ndarray
    factorization: linalg.LUFactorization

    @property
    def dim(self) -> int:
        return self.n + self.m


def assemble_m(P: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Stack the complementarity matrix ``[[P, A^T], [-A, 0]]``."""
    n, m = P.shape[0], A.shape[0]
    M = np.zeros((n + m, n + m))
    M[:n, :n] = P
    M[:n, n:] = A.T
    M[n:, :n] = -A
    return M


def build_lcp(qp: QPInstance) -> LCPSystem:
    """Assemble ``(M, q)`` for an instance and factorize ``M + I``.

    ``M + I`` is nonsingular for any valid PSD instance, so a singular
    factorization here signals corrupted data and is propagated.
    """
    M = assemble_m(qp.P, qp.A)
    q = np.concatenate([qp.c, qp.b])
    fact = linalg.factorize(M + np.eye(qp.n + qp.m))
    return LCPSystem(n=qp.n, m=qp.m, M=M, q=q, factorization=fact)


def kkt_residuals(
    qp: QPInstance, x, y, s
) -> tuple[float, float, float, float]:
    """Return (primal, dual, complementarity, cone) residual norms.

    primal = ||A x + s - b||, dual = ||P x + A^T y + c||, comp = |s^T y|,
    cone = ||min(s, 0)|| + ||min(y, 0)||.
    """
    x = linalg.as_vector(x, qp.n)
    y = linalg.as_vector(y, qp.m)
    s = linalg.as_vector(s, qp.m)
    primal = float(np.linalg.norm(qp.A @ x + s - qp.b))
    dual = float(np.linalg.norm(qp.P @ x + qp.A.T @ y + qp.c))
    comp = float(abs(s @ y))
    cone = float(np.linalg.norm(np.minimum(s, 0.0)) + np.linalg.norm(np.minimum(y, 0.0)))
    return primal, dual, comp, cone


class ParametricFamily:
    """A family of QPs with fixed ``(P, A)`` and parameter-dependent ``(c, b)``.

    ``instantiate`` maps a parameter vector to a concrete instance;
    ``lcp`` returns the complementarity system, reusing one cached
    factorization of ``M + I`` across all parameters when
    ``shared_factorization`` is set.  Families are read-only after
    construction and safe to share.
    """

    def __init__(
        self,
        family_id: str,
        P,
        A,
        c_of: Callable[[np.ndarray], np.ndarray],
        b_of: Callable[[np.ndarray], np.ndarray],
        d: int,
        sampler: Callable[[np.random.Generator], np.ndarray],
        seed: int = 0,
        rho2: float | None = None,
        shared_factorization: bool = True,
        averaged_regime: bool = False,
        theta_validator: Callable[[np.ndarray], None] | None = None,
        meta: dict | None = None,
    ):
        self.family_id = family_id
        self.P = linalg.as_matrix(P)
        self.A = linalg.as_matrix(A)
        self.c_of = c_of
        self.b_of = b_of
        self.d = d
        self.sampler = sampler
        self.seed = seed
        self.rho2 = rho2
        self.shared_factorization = shared_factorization
        self.averaged_regime = averaged_regime
        self.theta_validator = theta_validator
        self.meta = dict(meta or {})
        self.n = self.P.shape[0]
        self.m = self.A.shape[0]
        self.dim = self.n + self.m
        self._cached_m: np.ndarray | None = None
        self._cached_fact: linalg.LUFactorization | None = None
        self.factorization_count = 0

    def _check_theta(self, theta) -> np.ndarray:
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        if theta.ndim != 1 or theta.shape[0] != self.d:
            raise BadParameterDimensionError(
                f"{self.family_id}: theta has shape {theta.shape}, expected ({self.d},)"
            )
        if self.theta_validator is not None:
            self.theta_validator(theta)
        return theta

    def instantiate(self, theta) -> QPInstance:
        """Build the instance for one parameter vector."""
        theta = self._check_theta(theta)
        return QPInstance(
            P=self.P, A=self.A, c=self.c_of(theta), b=self.b_of(theta), theta=theta
        )

    def _shared(self) -> tuple[np.ndarray, linalg.LUFactorization]:
        if self._cached_fact is None:
            self._cached_m = assemble_m(self.P, self.A)
            self._cached_fact = linalg.factorize(self._cached_m + np.eye(self.dim))
            self.factorization_count += 1
        return self._cached_m, self._cached_fact

    def shared_fact(self) -> linalg.LUFactorization:
        """The one cached factorization of M + I (shared families only)."""
        if not self.shared_factorization:
            raise ValueError(f"{self.family_id} does not share a factorization")
        return self._shared()[1]

    def lcp(self, theta) -> LCPSystem:
        """Complementarity system for one parameter vector."""
        theta = self._check_theta(theta)
        q = np.concatenate([self.c_of(theta), self.b_of(theta)])
        if self.shared_factorization:
            M, fact = self._shared()
            return LCPSystem(n=self.n, m=self.m, M=M, q=q, factorization=fact)
        sys = build_lcp(self.instantiate(theta))
        self.factorization_count += 1
        return sys

    def q_batch(self, thetas: np.ndarray) -> np.ndarray:
        """Stack q vectors for many parameters into a (n+m, N) matrix."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        Q = np.empty((self.dim, thetas.shape[0]))
        for i, theta in enumerate(thetas):
            theta = self._check_theta(theta)
            Q[: self.n, i] = self.c_of(theta)
            Q[self.n :, i] = self.b_of(theta)
        return Q

    def sample_thetas(self, count: int, seed: int | None = None) -> np.ndarray:
        """Draw ``count`` parameters deterministically from the family seed.

        Sample ``i`` uses its own seed stream derived from ``(seed, 1, i)``,
        so datasets are reproducible independently of batching.
        """
        base = self.seed if seed is None else seed
        out = np.empty((count, self.d))
        for i in range(count):
            rng = np.random.default_rng(np.random.SeedSequence((base, 1, i)))
            out[i] = self.sampler(rng)
        return out


def instance_to_json(qp: QPInstance) -> str:
    """Serialize an instance to the documented JSON format."""
    return json.dumps(
        {
            "n": qp.n,
            "m": qp.m,
            "P": qp.P.tolist(),
            "A": qp.A.tolist(),
            "c": qp.c.tolist(),
            "b": qp.b.tolist(),
            "theta": qp.theta.tolist(),
        }
    )


def instance_from_json(text: str) -> QPInstance:
    """Parse an instance from the documented JSON format."""
    obj = json.loads(text)
    return make_instance(obj["P"], obj["A"], obj["c"], obj["b"], obj["theta"])
