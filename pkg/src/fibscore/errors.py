"""Exception hierarchy shared by every fibscore module."""

from __future__ import annotations


class FibError(ValueError):
    """Base class for all fibscore errors."""


class DimensionMismatch(FibError):
    pass


class NonFiniteInput(FibError):
    pass


class NegativeError(FibError):
    pass


class DegenerateDimension(FibError):
    """Raised when imbalance is requested over a single feature or group."""


class OutOfBounds(FibError):
    """A normalized quantity left [0, 1] by more than the rounding slack."""


class TooFewFeatures(FibError):
    pass


class BadAssignment(FibError):
    pass


class VerificationFailure(FibError):
    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = point


class BadSpec(FibError):
    pass


class DivergenceDetected(FibError):
    pass


class ParseError(FibError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class MissingColumn(FibError):
    pass


class TooFewRows(FibError):
    pass


class SingularSystem(FibError):
    pass


class DegenerateLabels(FibError):
    pass
