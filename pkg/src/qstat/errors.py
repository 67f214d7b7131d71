"""Exception types shared across the package."""


class QstatError(Exception):
    """Base class for all package errors."""


class ValidationError(QstatError, ValueError):
    """Inputs violate a documented invariant."""


class ZeroProbabilityRecord(QstatError):
    """An observation has probability zero under the model.

    ``step`` is the 1-based index of the offending observation.
    """

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"zero-probability observation at step {step}")


class ConditioningError(QstatError, ArithmeticError):
    """A covariance lost positive (semi)definiteness beyond tolerance."""

    def __init__(self, message, step=None, eigenvalue=None):
        self.step = step
        self.eigenvalue = eigenvalue
        super().__init__(message)


class StabilityError(QstatError, ArithmeticError):
    """A drift matrix is not Hurwitz, so no steady state exists."""


class ResourceLimitError(QstatError):
    """An oracle would exceed its configured size cap."""


class DegeneratePosterior(QstatError, ArithmeticError):
    """Prior and likelihood have (numerically) disjoint support."""
