"""Exception hierarchy.

Everything raised for bad data derives from ``DataError`` so the CLI can map
it to exit code 2 in one place.
"""

from __future__ import annotations


class EasqeError(Exception):
    """Base class for all package errors."""


class DataError(EasqeError):
    """Input data is malformed or violates an invariant."""


class InvalidBIO(DataError):
    pass


class OverlapError(DataError):
    pass


class CategoryError(DataError):
    pass


class TooLong(DataError):
    pass


class SpanOutOfBounds(DataError):
    pass


class MissingEmbedding(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class FormatError(DataError):
    pass


class ShapeError(DataError):
    pass


class ModeError(EasqeError):
    pass


class SchemeMismatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


class TaskError(DataError):
    pass


class IdMismatch(DataError):
    pass


class ParseError(DataError):
    def __init__(self, line: int, message: str = ""):
        self.line = line
        super().__init__(f"line {line}: {message}" if message else f"line {line}")


class ValidationError(DataError):
    def __init__(self, line: int, violations: list[str]):
        self.line = line
        self.violations = list(violations)
        super().__init__(f"line {line}: {', '.join(self.violations)}")
