"""Exception hierarchy. CLI exit codes key off these classes."""


class FnhomError(Exception):
    """Base class for all package errors."""


class GridError(FnhomError, ValueError):
    """Invalid grid, direction or stencil request."""


class OperatorError(FnhomError, ValueError):
    """Malformed operator or matrix argument."""


class SolverError(FnhomError):
    """A discrete solve failed."""


class NotConverged(SolverError):
    """Iteration budget exhausted. ``best`` holds the last iterate."""

    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


class EllipticityViolation(SolverError):
    """A policy matrix lost diagonal dominance / monotonicity."""


class PropertyFailure(FnhomError):
    """A checked property failed; ``witness`` carries the offending data."""

    def __init__(self, msg, witness=None):
        super().__init__(msg)
        self.witness = witness or {}


class CriterionViolated(PropertyFailure):
    """F̄(A) differs from <f>; no quadratic-plus-periodic entire solution."""


class DecompositionFailed(PropertyFailure):
    """No admissible quadratic-plus-periodic profile fits the data."""


class ConfigError(FnhomError, ValueError):
    """Experiment configuration could not be parsed or validated."""
