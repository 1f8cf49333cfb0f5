"""Exception types shared across the toolkit.

Every error raised on a contract violation derives from DesraError so batch
drivers can distinguish per-record failures from programming errors.
"""


class DesraError(Exception):
    """Base class for all toolkit errors."""


class MissingFileError(DesraError):
    """A referenced input file does not exist."""


class UnsupportedFormatError(DesraError):
    """File exists but is not an 8/16-bit PNG of the expected channel layout."""


class CorruptDataError(DesraError):
    """PNG signature present but the file fails to decode."""


class ClassOutOfRangeError(DesraError):
    """Label map contains a class index >= the class count."""

    def __init__(self, value: int, position: tuple[int, int]):
        self.value = value
        self.position = position
        super().__init__(f"class index {value} at {position} exceeds class count")


class NonBinaryValueError(DesraError):
    """Mask PNG contains a value other than 0 or 255."""

    def __init__(self, value: int, position: tuple[int, int]):
        self.value = value
        self.position = position
        super().__init__(f"mask value {value} at {position} is not 0 or 255")


class ParseError(DesraError):
    """Malformed manifest line or weights file."""


class DuplicateIdError(DesraError):
    """Two manifest records share the same id."""


class SchemaVersionMismatchError(DesraError):
    """Weights file declares an unknown schema version."""


class DimensionMismatchError(DesraError):
    """Rasters that must share dimensions do not."""


class EvenWindowError(DesraError):
    """Local-statistics window size must be odd."""

    def __init__(self, n: int):
        self.n = n
        super().__init__(f"window size must be odd, got {n}")


class NonPositiveCError(DesraError):
    """Similarity stabilizer is zero while some sigma product vanishes."""


class WrongMapKindError(DesraError):
    """A distance map of the wrong kind was supplied."""


class ClassCountMismatchError(DesraError):
    """Accumulators with different class counts cannot be merged."""


class WriteError(DesraError):
    """An output file could not be written."""


class MissingMaskError(DesraError):
    """No detection mask is available for a manifest record."""


class MissingGtMaskError(DesraError):
    """Record lacks the ground-truth mask required for evaluation."""


class EmptyInputError(DesraError):
    """An aggregate was requested over an empty collection."""
