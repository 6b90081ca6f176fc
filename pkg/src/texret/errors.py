"""Exception hierarchy shared across the package.

The CLI maps these onto its stable exit codes: configuration/usage
problems exit 2, data problems exit 3, signature incompatibility exits 4.
"""


class TexretError(Exception):
    """Base class for all package errors."""


class ConfigurationError(TexretError, ValueError):
    """Invalid transform/scheme configuration (bad filter length,
    unsupported direction count, scheme/config mismatch)."""


class UsageError(TexretError):
    """Invalid CLI flag combination."""


class DecompositionError(TexretError):
    """Input plane cannot be decomposed (too small for the scale count)."""


class DegenerateSampleError(TexretError):
    """Sample set has zero variance or is otherwise unusable for fitting."""


class DomainError(TexretError, ValueError):
    """Scalar argument outside the mathematical domain of an operation."""


class ShapeError(TexretError, ValueError):
    """Mismatched vector/matrix dimensions."""


class NumericError(TexretError):
    """Numerical routine failed to converge or hit a singular system."""


class DataError(TexretError):
    """Problems with external data (datasets, index files)."""


class IngestionError(DataError):
    """An input image cannot be used as a query or database entry."""


class IndexFormatError(DataError):
    """Index file has a bad magic number or unsupported version."""


class IndexCorruptionError(DataError):
    """Index file is truncated or internally inconsistent."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class IncompatibleSignatureError(TexretError):
    """Two signatures (or a signature and an index) cannot be compared."""
