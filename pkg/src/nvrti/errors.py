"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the requested quantity."""


class NumericalError(RuntimeError):
    """A numerical routine failed to reach its requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class UnreachableThresholdError(NumericalError):
    """The probability of reaching the photon threshold underflows."""


class ConvergenceError(NumericalError):
    """An iterative procedure exhausted its budget without terminating."""
