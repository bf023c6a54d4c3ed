"""Exception hierarchy shared by all modules."""


class DeformedMPError(Exception):
    """Base class for every error raised by the package."""


class ParameterError(DeformedMPError, ValueError):
    """An argument is outside the documented range."""


class DomainError(DeformedMPError, ValueError):
    """A measure profile is not positive on its support."""


class EvaluationError(DeformedMPError, ArithmeticError):
    """An integrand produced a non-finite value or hit a singularity."""


class RegimeError(DeformedMPError):
    """The operation is only defined on the other side of the d = d_plus threshold."""


class SolverError(DeformedMPError, ArithmeticError):
    """An iterative solver did not converge.

    The last residual is kept on ``residual`` so callers can decide whether
    a slightly loose answer is still usable.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class RootError(DeformedMPError):
    """No sign change was found in a scan window."""


class NumericalError(DeformedMPError, ArithmeticError):
    """Dense linear algebra failed (eigensolver or factorization)."""


class RunError(DeformedMPError):
    """Too many Monte Carlo trials failed; the partial table is on ``table``."""

    def __init__(self, message, table=None):
        super().__init__(message)
        self.table = table
