"""Exception hierarchy shared by every module."""


class ExmldsError(Exception):
    """Base class for all errors raised by the package."""


class DataError(ExmldsError, ValueError):
    """Malformed or dimensionally inconsistent input data."""


class XMLCParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(ExmldsError, ArithmeticError):
    """A numerical routine failed (non-convergence, non-finite values)."""


class DegenerateGradientError(NumericalError):
    """Cosine gradient requested for a (near) zero-norm embedding."""
