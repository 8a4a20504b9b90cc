"""Exception hierarchy.

Validation-type errors (bad input, gain outside the stabilizing set) derive
from :class:`ValidationError`; failures of an iterative numerical method
derive from :class:`NumericalError`. The CLI maps the two families onto
distinct exit codes.
"""


class InnovGradError(Exception):
    """Base class for all package errors."""


class ValidationError(InnovGradError, ValueError):
    """Input violates a documented invariant or precondition."""


class DimensionError(ValidationError):
    pass


class NotPSDError(ValidationError):
    pass


class DomainError(ValidationError):
    """A gain (or other argument) lies outside the domain of an operation."""


class InstabilityError(DomainError):
    """A closed-loop matrix has spectral radius >= 1 (or within the margin)."""

    def __init__(self, message, rho):
        super().__init__(message)
        self.rho = rho


class PreconditionError(ValidationError):
    pass


class EmptyProbeError(DomainError):
    pass


class NumericalError(InnovGradError, ArithmeticError):
    """An iterative method failed to converge or meet its residual bound."""

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class ConsistencyError(NumericalError):
    """A computed result fails a mathematical consistency check."""


class StallError(NumericalError):
    """Descent could not find an acceptable step above the minimum step size."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class SamplingError(NumericalError):
    pass
