"""Exception types shared across the package."""


class DrwsError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(DrwsError):
    """Operand shapes are inconsistent."""


class SingularMatrixError(DrwsError):
    """A pivot fell below the singularity threshold during factorization."""


class BadParameterDimensionError(DrwsError):
    """A parameter vector has the wrong length for its family."""


class NonFiniteIterateError(DrwsError):
    """An iterate contains NaN or infinite entries."""


class DivergenceError(DrwsError):
    """The fixed-point residual exceeded the divergence threshold."""


class EstimationFailedError(DrwsError):
    """No iterate fell inside the valid estimation window."""


class ZeroLossGradientError(DrwsError):
    """The loss is (numerically) zero, where its gradient is undefined."""


class EmptyStoreError(DrwsError):
    """A nearest-neighbor warm-start store has no entries."""


class BadInputsError(DrwsError):
    """Bound inputs are outside their valid ranges."""


class InfeasibleStartError(DrwsError):
    """An initial state violates the family's state bounds."""


class CorruptModelFileError(DrwsError):
    """A model file failed its magic, version, or digest check."""


class ConfigError(DrwsError):
    """A benchmark configuration file is invalid."""
