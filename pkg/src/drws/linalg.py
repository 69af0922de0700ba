"""Dense matrix/vector validation and cached LU factorizations.

Matrices are plain float64 row-major numpy arrays.  Factorizations use
LAPACK's LU with partial pivoting and support direct and transpose solves
so one cached factorization serves both the forward iteration and its
adjoint.  Factorization objects are immutable and safe to share across
concurrent solves.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionMismatchError, SingularMatrixError

# Pivot magnitudes below this fraction of the largest entry are treated as
# singular (double-precision safety margin).
PIVOT_RTOL = 1e-14


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Return ``values`` as a validated dense float64 row-major matrix."""
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-d matrix, got ndim={m.ndim}")
    if rows is not None and m.shape != (rows, cols):
        raise DimensionMismatchError(f"expected shape ({rows}, {cols}), got {m.shape}")
    if m.size and not np.isfinite(m).all():
        raise ValueError("matrix entries must be finite")
    return m


def as_vector(values, size: int | None = None) -> np.ndarray:
    """Return ``values`` as a validated dense float64 vector."""
    v = np.ascontiguousarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatchError(f"expected a 1-d vector, got ndim={v.ndim}")
    if size is not None and v.shape[0] != size:
        raise DimensionMismatchError(f"expected length {size}, got {v.shape[0]}")
    return v


@dataclass(frozen=True)
class LUFactorization:
    """Packed LU factors (partial pivoting) of a square nonsingular matrix.

    ``lu`` stores the unit-lower and upper factors in LAPACK's packed
    layout and ``piv`` the pivot indices.  Instances are read-only.
    """

    dim: int
    lu: np.ndarray
    piv: np.ndarray


def factorize(matrix) -> LUFactorization:
    """Factorize a square matrix for repeated direct and transpose solves.

    Raises :class:`SingularMatrixError` when any pivot magnitude falls at or
    below ``PIVOT_RTOL`` times the largest entry of the input.
    """
    m = as_matrix(matrix)
    if m.shape[0] != m.shape[1]:
        raise DimensionMismatchError(f"matrix must be square, got {m.shape}")
    if m.shape[0] == 0:
        raise DimensionMismatchError("cannot factorize an empty matrix")
    with warnings.catch_warnings():
        # Exact singularity is detected below via the pivot threshold.
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(m, check_finite=False)
    scale = float(np.abs(m).max())
    min_pivot = float(np.abs(np.diag(lu)).min())
    if scale == 0.0 or min_pivot <= PIVOT_RTOL * scale:
        raise SingularMatrixError(
            f"pivot {min_pivot:.3e} at or below threshold {PIVOT_RTOL * scale:.3e}"
        )
    lu.setflags(write=False)
    piv.setflags(write=False)
    return LUFactorization(dim=m.shape[0], lu=lu, piv=piv)


def _check_rhs(f: LUFactorization, rhs) -> np.ndarray:
    b = np.ascontiguousarray(rhs, dtype=np.float64)
    if b.ndim not in (1, 2) or b.shape[0] != f.dim:
        raise DimensionMismatchError(
            f"rhs leading dimension must be {f.dim}, got shape {b.shape}"
        )
    return b


def solve(f: LUFactorization, rhs) -> np.ndarray:
    """Solve ``M x = rhs`` for the matrix ``M`` behind ``f``.

    ``rhs`` may be a vector or a matrix of stacked right-hand-side columns.
    """
    b = _check_rhs(f, rhs)
    return scipy.linalg.lu_solve((f.lu, f.piv), b, trans=0, check_finite=False)


def solve_transpose(f: LUFactorization, rhs) -> np.ndarray:
    """Solve ``M^T x = rhs`` for the matrix ``M`` behind ``f``."""
    b = _check_rhs(f, rhs)
    return scipy.linalg.lu_solve((f.lu, f.piv), b, trans=1, check_finite=False)
