"""Exception hierarchy.

The CLI maps these onto exit codes: configuration problems exit 1,
numerical failures exit 2, property violations exit 3.
"""


class PowerPostError(Exception):
    """Base class for all package errors."""


class ConfigError(PowerPostError, ValueError):
    """Invalid names, parameters or configuration files."""


class DomainError(PowerPostError, ValueError):
    """A parameter value lies outside the model's parameter box."""


class NumericalError(PowerPostError, ArithmeticError):
    """A numerical procedure failed or produced an unusable result."""


class ConvergenceError(NumericalError):
    """An optimizer did not reach a stationary point."""


class NonUniqueMleError(ConvergenceError):
    """Jittered restarts of the MLE search disagree."""

    def __init__(self, message: str, candidates=None):
        super().__init__(message)
        self.candidates = candidates


class CurvatureError(NumericalError):
    """The curvature matrix is not positive definite."""


class GridTooNarrowError(NumericalError):
    """Posterior mass reaches the outermost grid cells."""


class MixingError(NumericalError):
    """Metropolis acceptance rate stayed outside the usable range."""


class PropertyViolation(PowerPostError, AssertionError):
    """A checked inequality or identity failed."""
