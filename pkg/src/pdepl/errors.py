"""Exception hierarchy shared across the package."""


class PdeplError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PdeplError):
    """Invalid configuration value; the message names the violated bound."""


class SimulationError(PdeplError):
    """Forward or backward integration failure.

    Carries the last time the integrator reached before giving up.
    """

    def __init__(self, message, last_time=None):
        super().__init__(message)
        self.last_time = last_time


class CapabilityError(PdeplError):
    """A required derivative callback or feature is not available."""


class ObjectiveEvaluationError(PdeplError):
    """Objective evaluation failed; optimizers treat the value as +inf."""


class EstimationError(PdeplError):
    """All optimization starts failed.  ``diagnostics`` holds per-start info."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class InfeasibleConstraintError(PdeplError):
    """Constraint value unreachable within the parameter bounds."""


class KrylovError(PdeplError):
    """Iterative saddle-point solve did not converge."""
