"""Exception hierarchy shared by every module."""


class BrakeFilterError(Exception):
    """Base class for all package errors."""


class DomainError(BrakeFilterError, ValueError):
    """Kinematic input outside the domain where features are defined."""


class DimensionError(BrakeFilterError, ValueError):
    pass


class ConfigError(BrakeFilterError, ValueError):
    pass


class InsufficientDataError(BrakeFilterError):
    pass


class EmptyInputError(BrakeFilterError, ValueError):
    pass


class LengthMismatchError(BrakeFilterError, ValueError):
    pass


class DegenerateComponentError(BrakeFilterError):
    """A covariance could not be made positive definite."""


class SingularMatrixError(BrakeFilterError):
    pass


class NumericalError(BrakeFilterError):
    pass


class UndefinedMetricError(BrakeFilterError, ZeroDivisionError):
    """A rate whose denominator is zero.

    ``metric`` names the rate (``"sensitivity"``, ``"specificity"`` or
    ``"accuracy"``) so callers can decide how to report it.
    """

    def __init__(self, metric, message=None):
        self.metric = metric
        super().__init__(message or f"{metric} undefined: zero denominator")


class ParseError(BrakeFilterError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(BrakeFilterError, ValueError):
    pass


class MonotonicityError(BrakeFilterError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ModelFormatError(BrakeFilterError, ValueError):
    """Model file failed validation; ``path`` locates the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")
