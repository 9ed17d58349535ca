"""Exception types shared across the package."""


class SpandmdError(Exception):
    """Base class for all package errors."""


class ValidationError(SpandmdError, ValueError):
    """Inputs violate a documented precondition or invariant."""


class FormatError(SpandmdError):
    """A byte stream is not a well-formed SDMS file."""


class FormulationError(SpandmdError):
    """Operator formulation is incompatible with the available data."""


class DegenerateTokenError(SpandmdError):
    """A metric denominator vanished on one or more tokens."""

    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = list(indices) if indices is not None else []


class GenerationError(SpandmdError):
    """Trajectory generation produced non-finite activations."""
