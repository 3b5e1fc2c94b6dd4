"""Exception types raised by the numerical routines."""


class ResponseLabError(Exception):
    """Base class for all package errors."""


class DomainError(ResponseLabError, ValueError):
    """An argument lies outside the domain of a map family or operation."""


class CuspProximityError(DomainError):
    """A derivative was requested at (or numerically at) the turning point."""


class NoPreimageError(DomainError):
    """A point has no preimage on the requested branch."""


class ConvergenceError(ResponseLabError, ArithmeticError):
    """An iterative solver stopped without meeting its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConfigError(ResponseLabError, ValueError):
    """A run configuration is malformed or out of range."""
