"""Exception types raised across the package."""


class TaskBalanceError(Exception):
    pass


class ValidationError(TaskBalanceError, ValueError):
    """Invalid input shape, size, or configuration value."""


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericError(TaskBalanceError, ArithmeticError):
    """A nonfinite value appeared where a finite one is required."""


class StateError(TaskBalanceError, RuntimeError):
    """An operation was called without the history it needs."""


class ConfigurationError(TaskBalanceError, ValueError):
    pass


class DomainError(TaskBalanceError, ValueError):
    """Argument outside the mathematical domain of a function."""


class TransformOverflowError(TaskBalanceError, OverflowError):
    def __init__(self, z, T):
        self.z = z
        self.T = T
        super().__init__(f"exp(z/T) overflows for z={z!r}, T={T!r}")
