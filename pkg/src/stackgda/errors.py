"""Exception types raised across the package."""


class StackGDAError(Exception):
    """Base class for all package errors."""


class DimensionError(StackGDAError, ValueError):
    """An input vector has the wrong length.

    Parameters
    ----------
    field : str
        Name of the offending argument.
    expected, got : int
        Expected and actual lengths.
    """

    def __init__(self, field, expected, got):
        self.field = field
        self.expected = expected
        self.got = got
        super().__init__(f"{field}: expected length {expected}, got {got}")


class InfeasibleProfileError(StackGDAError, ValueError):
    """A strategy profile violates constraints or set membership."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = ", ".join(f"{name}={value:.3e}" for name, value in self.violations)
        super().__init__(f"infeasible profile: {lines}")


class ProjectionError(StackGDAError, RuntimeError):
    """An iterative projection did not converge.

    Attributes
    ----------
    last_iterate : ndarray
        Iterate at the moment the iteration budget ran out.
    residual : float
        Last observed change / feasibility residual.
    """

    def __init__(self, message, last_iterate=None, residual=float("nan")):
        self.message = message
        self.last_iterate = last_iterate
        self.residual = residual
        suffix = "" if residual != residual else f" (residual={residual:.3e})"
        super().__init__(message + suffix)

    def __reduce__(self):
        return (type(self), (self.message, self.last_iterate, self.residual))


class DomainError(StackGDAError, ValueError):
    """A function was evaluated outside its domain (log of nonpositive, c <= 0, ...)."""


class UnboundedDemandError(DomainError):
    """A buyer's demand is unbounded because every desired good is free."""


class DivergenceError(StackGDAError, RuntimeError):
    """Iterates of a dynamic became non-finite."""


class ConfigError(StackGDAError, ValueError):
    """Invalid experiment or run configuration."""
