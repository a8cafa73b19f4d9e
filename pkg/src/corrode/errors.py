"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class CorrodeError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(CorrodeError, ValueError):
    """Invalid user-facing configuration (unknown name, bad partition, malformed key)."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class GeometryError(CorrodeError):
    """Degenerate or non-conforming geometry."""


class InputError(CorrodeError, ValueError):
    """Data given on the wrong node set or with the wrong shape."""


class NumericalError(CorrodeError):
    """A numerical procedure failed to reach its tolerance."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class IndefiniteError(NumericalError):
    """Conjugate gradients broke down or did not converge."""

    def __init__(self, message: str, trace=None):
        super().__init__(message, report=trace)
        self.trace = list(trace or [])


class ConstraintDegeneracyError(NumericalError):
    """Constraint matrix of a saddle-point system is rank deficient."""


class DimensionOverflowError(NumericalError):
    """Numerical null space larger than the allowed cap."""


class RankDeficiencyError(NumericalError):
    """Unregularized least-squares problem with a rank-deficient operator."""


class NonContractionError(NumericalError):
    """Fixed-point iteration failed to contract."""


class DivergenceError(NumericalError):
    """Newton iteration diverged."""


class DecompositionError(NumericalError):
    """A nonlinear solution could not be split into linear part plus remainder."""


class ApproximationError(NumericalError):
    """Regularization schedule exhausted before the requested accuracy."""


class SweepError(NumericalError):
    """Amplitude sweep failed at its smallest amplitude."""


class CompletionError(NumericalError):
    """Cauchy data completion found no admissible regularization weight.

    ``fallback`` holds the flagged completion at the largest weight, if any.
    """

    def __init__(self, message: str, report=None, fallback=None):
        super().__init__(message, report)
        self.fallback = fallback
