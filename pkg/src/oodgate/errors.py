"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, anything else -> 4.
"""


class OodgateError(Exception):
    """Base class for all package errors."""


class ConfigError(OodgateError):
    """Invalid or inconsistent configuration."""


class DataError(OodgateError):
    """Invalid input data or on-disk artifact."""


class TzrFormatError(DataError):
    """Malformed TZR file. Carries the byte offset of the offending field."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ValidationError(DataError):
    """Value-level violation: non-finite payloads, out-of-range values, zero vectors."""


class SizeError(DataError):
    """Shape or extent mismatch between operands."""


class FitError(DataError):
    """Prototype fitting failed for a class."""


class DegenerateClassError(FitError):
    """A class's weighted feature sum vanished, so its direction is undefined."""


class CalibrationError(DataError):
    """Not enough validation data to calibrate a gate."""
