"""
Exception hierarchy for the digit CNN engine.

Every error carries the exit code the command line maps it to:
1 usage, 2 data, 3 runtime (model format, numerics, shapes).
"""
from typing import Optional


class DigitCnnError(Exception):
    """Base class for all engine errors"""
    exit_code = 3


# ============================================================================
# Usage (exit 1)
# ============================================================================

class UsageError(DigitCnnError):
    exit_code = 1


# ============================================================================
# Data (exit 2)
# ============================================================================

class DataError(DigitCnnError):
    exit_code = 2


class HeaderError(DataError):
    pass


class PixelValueError(DataError, ValueError):
    """Non-integer, missing or out-of-range pixel, reported with its data row."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        super().__init__(message)
        self.row = row
        self.column = column


class LabelError(DataError):
    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(message)
        self.row = row


class InvalidSplit(DataError):
    pass


class AlreadyNormalized(DataError):
    pass


# ============================================================================
# Engine / runtime (exit 3)
# ============================================================================

class EngineError(DigitCnnError):
    exit_code = 3


class ShapeMismatch(EngineError):
    pass


class NonFinite(EngineError):
    pass


class OddDimension(EngineError):
    pass


class InvalidRate(EngineError):
    pass


class InvalidLabel(EngineError):
    pass


class InvalidConfig(EngineError):
    pass


class LengthMismatch(EngineError):
    pass


class EmptyInput(EngineError):
    pass


class FormatError(EngineError):
    """Malformed model file. `offset` is the byte position where reading failed."""

    def __init__(self, message: str, offset: Optional[int] = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ChecksumError(FormatError):
    pass
