"""Exception types shared across the toolbox.

The CLI maps these onto exit codes: ConfigError -> 2, NumericalFailure -> 3.
Analysis failures (a check that ran and said "no") are verdicts, not
exceptions.
"""


class IsscertError(Exception):
    """Base class for all toolbox errors."""


class DomainError(IsscertError, ValueError):
    """An argument is outside the mathematical domain (negative radius, ...)."""


class ShapeError(IsscertError, ValueError):
    """Vector/matrix dimensions do not match."""


class ClassError(IsscertError, ValueError):
    """A comparison function does not belong to the required class."""


class RangeError(IsscertError, ValueError):
    """Inverse queried above the asymptotic range of a bounded function."""


class ModelError(IsscertError, ValueError):
    """A supplied function violates a model assumption (e.g. not positive
    definite on the probe grid)."""


class UnsupportedFormError(IsscertError, ValueError):
    """Operation not available for this representation."""


class InfeasibleError(IsscertError, ValueError):
    """A construction's feasibility condition fails; carries a witness."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class SizeError(IsscertError, ValueError):
    """Problem too large for an exhaustive algorithm."""


class DivergenceError(IsscertError, RuntimeError):
    """An iteration left the admissible region (e.g. Kleene star blow-up)."""

    def __init__(self, message, iterate=None, step=None):
        super().__init__(message)
        self.iterate = iterate
        self.step = step


class ConfigError(IsscertError, ValueError):
    """Malformed task or scenario configuration."""


class NumericalFailure(IsscertError, RuntimeError):
    """A solver produced NaN/Inf or failed to converge."""

    def __init__(self, message, last_valid_time=None):
        super().__init__(message)
        self.last_valid_time = last_valid_time
