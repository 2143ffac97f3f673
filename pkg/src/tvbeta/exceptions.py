"""Exception types shared across the package."""


class TVBetaError(Exception):
    """Base class for package errors."""


class DomainError(TVBetaError, ValueError):
    """An input lies outside the domain of a function (e.g. non-finite)."""


class ParameterError(TVBetaError, ValueError):
    """An invalid tuning parameter, such as a non-positive bandwidth."""


class NoDataError(TVBetaError):
    """No kernel mass at the requested time: nothing to smooth over."""


class SingularJacobianError(TVBetaError, ArithmeticError):
    """The Jacobian (or its approximate inverse) cannot be formed."""


class ClassViolation(TVBetaError, ValueError):
    """A matrix fails one of the structural membership conditions."""

    def __init__(self, failures):
        self.failures = list(failures)
        super().__init__("; ".join(self.failures))
