"""Exception and warning types shared across the engine."""


class ExcelOodError(Exception):
    """Base class for all errors raised by this package."""


class MalformedFile(ExcelOodError):
    """File magic, header, or payload does not match the expected format."""


class ShapeError(ExcelOodError):
    """Array has the wrong number of dimensions or an illegal shape."""


class NonFiniteValue(ExcelOodError):
    """A NaN or infinity was found where only finite values are allowed."""

    def __init__(self, message: str, row: int | None = None, col: int | None = None):
        super().__init__(message)
        self.row = row
        self.col = col


class LengthMismatch(ExcelOodError):
    """A vector does not have the length required by its companion data."""


class LabelOutOfRange(ExcelOodError):
    """A class label falls outside [0, num_classes)."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class EmptyPayload(ExcelOodError):
    """Refusing to persist an empty vector or matrix."""


class IoError(ExcelOodError):
    """Underlying file could not be read or written."""


class VersionMismatch(ExcelOodError):
    """Container magic or format version is not supported."""


class ChecksumMismatch(ExcelOodError):
    """Container payload is truncated or fails its CRC check."""


class DimensionMismatch(ExcelOodError):
    """Operands disagree on the number of classes."""


class MissingContext(ExcelOodError):
    """A scoring method was invoked without the context it requires."""


class EmptyInput(ExcelOodError):
    """Metric inputs must contain at least one score on each side."""


class EmptyBatch(ExcelOodError):
    """Synthetic batches must contain at least one sample."""


class ManifestError(ExcelOodError):
    """Split manifest is malformed or references missing files."""


class ConfigError(ExcelOodError):
    """Run configuration or grid specification is invalid."""


class ExcelOodWarning(UserWarning):
    """Non-fatal conditions: unreachable smoothing branches, fallback classes."""
