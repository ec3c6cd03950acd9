"""Exception hierarchy.

``DataError`` covers bad user input (exit code 1 in the CLI); every
``NumericError`` subclass is a numerical failure of a fit (exit code 2).
"""


class IPTWSizeError(Exception):
    """Base class for all package errors."""


class DataError(IPTWSizeError, ValueError):
    """Malformed or inconsistent input data or parameters."""


class NumericError(IPTWSizeError, ArithmeticError):
    """A fit or numerical routine could not produce a valid result."""


class ConvergenceError(NumericError):
    pass


class SeparationError(NumericError):
    """Propensity model shows complete or quasi-complete separation."""


class PositivityError(NumericError):
    """Fitted propensity scores or weights hit the numerical boundary."""


class NonEstimableError(NumericError):
    """MSM parameters are undefined (empty arm, mean outside link domain)."""


class SingularMatrixError(NumericError):
    pass


class BootstrapAbort(NumericError):
    """Too many bootstrap resamples failed even after redraws."""
