"""Exception types shared across the package."""


class IKDError(Exception):
    pass


class ShapeError(IKDError, ValueError):
    pass


class DomainError(IKDError, ValueError):
    """Raised when an op receives values outside its mathematical domain."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ConfigError(IKDError, ValueError):
    pass


class DataError(IKDError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


class StateError(IKDError, RuntimeError):
    pass


class UsageError(IKDError, RuntimeError):
    pass


class NumericError(IKDError, ArithmeticError):
    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


class ContractError(IKDError, RuntimeError):
    pass
