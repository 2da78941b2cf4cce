"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class EntropicControlError(Exception):
    """Base class for all package errors."""


class StructuralError(EntropicControlError, ValueError):
    """Dimension mismatch or otherwise malformed problem data."""


class ParameterError(EntropicControlError, ValueError):
    """An argument is outside its admissible range (e.g. a nonpositive penalty)."""


class PreconditionError(EntropicControlError, ValueError):
    """A documented precondition of an operation is violated."""


class SimulationError(EntropicControlError, FloatingPointError):
    """Non-finite values appeared while simulating paths."""

    def __init__(self, message: str, path: int | None = None, step: int | None = None):
        super().__init__(message)
        self.path = path
        self.step = step


class ReweightingError(EntropicControlError):
    """The terminal-law reweighting could not be formed."""

    def __init__(self, message: str, starved_fraction: float = 0.0):
        super().__init__(message)
        self.starved_fraction = starved_fraction


class EstimationError(EntropicControlError):
    """A nonparametric estimate is undefined (e.g. too few effective neighbours)."""


class MviError(EntropicControlError):
    """A mixed variational inequality solve could not be certified."""

    def __init__(self, message: str, u_best=None, residual: float = float("nan"), query=None):
        super().__init__(message)
        self.u_best = u_best
        self.residual = residual
        self.query = query


class SolverError(EntropicControlError):
    """Failure inside the alternating loop, annotated with the iteration index."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class ConfigError(EntropicControlError, ValueError):
    """Experiment configuration could not be parsed or validated."""
