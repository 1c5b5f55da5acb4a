class NetGSAError(Exception):
    """Base class for all errors raised by this package."""


class DataError(NetGSAError, ValueError):
    """Input data violate a precondition (shape, constant column, bad file)."""


class ConvergenceError(NetGSAError, RuntimeError):
    """An iterative solver stopped without meeting its convergence criterion."""

    def __init__(self, message, *, last_value=None):
        super().__init__(message)
        self.last_value = last_value
