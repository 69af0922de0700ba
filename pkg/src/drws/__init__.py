"""Learned warm starts for Douglas-Rachford splitting on parametric QPs."""

from . import bounds, engine, linalg, nn, qp, unroll, zoo
from .errors import DrwsError

__all__ = ["bounds", "engine", "linalg", "nn", "qp", "unroll", "zoo", "DrwsError"]
__version__ = "0.1.0"
