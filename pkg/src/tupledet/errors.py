"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: usage/config problems exit 1, data
problems exit 2.
"""


class TupledetError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(TupledetError, ValueError):
    """A vector/matrix dimension does not match what an operation requires."""


class ConfigError(TupledetError, ValueError):
    """An invalid configuration, batch, index, or argument combination."""


class DataError(TupledetError, ValueError):
    """A dataset-level problem: bad records, missing tokens, empty pools."""


class NoNegativesError(DataError):
    """Negative sampling was asked for m > 0 rows but the eligible pool is empty."""


class ParseError(DataError):
    """A file line could not be parsed; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(DataError):
    """A parsed record violates the file schema (e.g. inconsistent dims)."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InvalidBoxError(DataError):
    """A bounding box is degenerate (non-positive width or height)."""


class CheckpointError(TupledetError):
    """A checkpoint file is unreadable, truncated, or from a foreign format."""
