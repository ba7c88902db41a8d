"""Exception hierarchy shared by every module."""


class WKBLabError(Exception):
    """Base class for all library errors."""


class ConfigurationError(WKBLabError, ValueError):
    """Invalid or incomplete parameters, specs or config files."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class DomainError(WKBLabError, ValueError):
    """An argument lies outside the domain of the operation."""


class BandEdgeError(DomainError):
    """Energy at or outside a band of the periodic background."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class DegenerateBasisError(DomainError):
    pass


class NumericalError(WKBLabError, ArithmeticError):
    """A numerical procedure failed to reach its tolerance."""


class QuadratureError(NumericalError):
    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class NonIntegrableError(QuadratureError):
    """The integrand has a singularity that is not integrable on a cell."""

    def __init__(self, message, location=None, achieved=None):
        super().__init__(message, achieved=achieved)
        self.location = location


class IntegrationError(NumericalError):
    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class GrowthOverflow(IntegrationError):
    """|y| exceeded the overflow guard; itself evidence of unbounded growth."""


class InsufficientRangeError(DomainError):
    pass


class ResolutionError(NumericalError):
    pass


class SingularTransformError(DomainError):
    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class TailError(NumericalError):
    pass


class IterationDivergence(NumericalError):
    pass


class UnderflowError(NumericalError):
    pass


class ResourceError(WKBLabError, MemoryError):
    pass


class ConditioningError(NumericalError):
    """A least-squares fit is too ill-conditioned to be meaningful."""
