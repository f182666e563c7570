"""Exception types raised by the solver, coupling and estimator layers."""


class ZakaiMimcError(Exception):
    """Base class for all package errors."""


class DomainMisaligned(ZakaiMimcError):
    """Grid, domain endpoints, initial location or horizon do not divide exactly."""


class SolverFailure(ZakaiMimcError):
    """Tridiagonal solve hit a non diagonally dominant row."""


class InvalidLevel(ZakaiMimcError):
    """Refinement level outside the admissible range."""


class StabilityViolation(ZakaiMimcError):
    """Correlation above the mean-square stability threshold 1/sqrt(2)."""


class InvalidAccuracy(ZakaiMimcError):
    """Non-positive or otherwise unusable RMSE target."""


class MissingPilot(ZakaiMimcError):
    """Sample allocation requested for a level without pilot statistics."""


class BudgetExceeded(ZakaiMimcError):
    """Projected work exceeds the configured ceiling."""


class NoConvergence(ZakaiMimcError):
    """Iterative computation exhausted its schedule without converging."""


class ConfigError(ZakaiMimcError):
    """Experiment configuration could not be parsed or validated."""
