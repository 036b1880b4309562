"""Exception and warning classes raised by the revival package."""


class RevivalError(Exception):
    """Base class for all package errors."""


class DataError(RevivalError, ValueError):
    """Invalid input data: malformed records, orphan ids, bad CSV rows."""


class CensoredRecordError(DataError):
    """An operation needing a death time was given a censored record."""


class RankDeficiencyError(RevivalError, ValueError):
    """The mean design matrix does not have full column rank."""


class NumericalError(RevivalError, ArithmeticError):
    """Factorization or quadrature failure."""


class ConvergenceError(NumericalError):
    """An iterative fit did not converge.

    The best iterate found so far is kept on ``best`` when available.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ConvergenceWarning(UserWarning):
    """Optimizer stopped on its iteration budget; the best iterate is kept."""
