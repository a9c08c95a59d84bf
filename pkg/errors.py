"""
Exception hierarchy for the EKLF matrix-sequence completion toolkit
Every error carries a context dict that callers extend while the error propagates
"""

from typing import Any, Dict


class EKLFError(Exception):
    """Base class for all errors raised by this project"""

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = dict(context)

    def add_context(self, **context: Any) -> "EKLFError":
        """Attach location info (slot, node, column, iteration, file) and return self"""
        for key, value in context.items():
            self.context.setdefault(key, value)
        return self

    def __str__(self) -> str:
        if not self.context:
            return self.message
        where = ", ".join(f"{k}={v}" for k, v in self.context.items())
        return f"{self.message} ({where})"


# Data errors

class DataError(EKLFError, ValueError):
    """Invalid input data"""


class MalformedLine(DataError):
    def __init__(self, line_no: int, text: str, reason: str = "expected 4 fields 't i j w'"):
        super().__init__(f"malformed line {line_no}: {reason}", line=line_no)
        self.line_no = line_no
        self.text = text


class IndexOutOfRange(DataError):
    pass


class DuplicateKey(DataError):
    def __init__(self, key):
        super().__init__(f"duplicate observation key (t, i, j) = {key}")
        self.key = key


class NonFiniteWeight(DataError):
    pass


class EmptySequence(DataError):
    pass


class EmptyTrainSet(DataError):
    pass


class EmptyTestSet(DataError):
    pass


# Configuration errors

class ConfigError(EKLFError, ValueError):
    """Invalid configuration value"""


class NonPositiveLambda(ConfigError):
    pass


# Numerical errors

class NumericalError(EKLFError, ArithmeticError):
    """Failure inside a numerical kernel"""


class NotPositiveDefinite(NumericalError):
    pass


class NotSymmetric(NumericalError):
    pass


class DimensionMismatch(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass


class EmptyDesign(NumericalError):
    pass
