class RobustBoostingError(Exception):
    """Base class for data, model and configuration errors."""


class ParseError(RobustBoostingError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class InconsistentWidth(ParseError):
    pass


class EmptyDataset(RobustBoostingError):
    pass


class BadFraction(RobustBoostingError):
    pass


class UnknownClass(RobustBoostingError):
    pass


class DimensionMismatch(RobustBoostingError, ValueError):
    pass


class EmptyReachableSet(RobustBoostingError, ValueError):
    pass


class TooManyCells(RobustBoostingError):
    pass


class UnsupportedVersion(RobustBoostingError):
    pass


class SchemaError(RobustBoostingError):
    def __init__(self, pointer, message):
        self.pointer = pointer
        super().__init__(f"{pointer or '/'}: {message}")


class IoError(RobustBoostingError, OSError):
    pass
