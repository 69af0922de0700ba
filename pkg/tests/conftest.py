"""Shared fixtures: the tiny analytic QP and random strongly convex instances."""

from __future__ import annotations

import numpy as np
import pytest

from drws import engine, qp


def tiny_qp() -> qp.QPInstance:
    """min (1/2) x^2 s.t. x >= 1; solution x* = 1, y* = 1, s* = 0.

    In standard form: P = [[1]], A = [[-1]], c = (0,), b = (-1,), giving
    M = [[1, -1], [1, 0]], q = (0, -1) and fixed point z* = (1, 1).
    """
    return qp.make_instance([[1.0]], [[-1.0]], [0.0], [-1.0], [0.0])


@pytest.fixture
def tiny_sys() -> qp.LCPSystem:
    return qp.build_lcp(tiny_qp())


def random_strongly_convex(
    seed: int, n: int = 6, m: int = 8
) -> tuple[qp.QPInstance, qp.LCPSystem]:
    """A strictly feasible strongly convex instance with P = G^T G + I."""
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, n)) / np.sqrt(n)
    P = G.T @ G + np.eye(n)
    A = rng.standard_normal((m, n)) / np.sqrt(n)
    c = rng.standard_normal(n)
    x0 = rng.uniform(-1.0, 1.0, n)
    s0 = rng.uniform(0.1, 1.1, m)
    b = A @ x0 + s0
    inst = qp.make_instance(P, A, c, b, theta=b)
    return inst, qp.build_lcp(inst)


def random_z0(seed: int, dim: int, scale: float = 1.0) -> np.ndarray:
    return np.random.default_rng(seed).normal(scale=scale, size=dim)
