"""Exception hierarchy shared across the package."""


class MixRelabelError(Exception):
    """Base class for all package errors."""


class DataFormatError(MixRelabelError, ValueError):
    """Malformed input: wrong shapes, invalid parameters, bad files."""


class DimensionError(DataFormatError):
    """Point or parameter dimension does not match the mixture."""

    def __init__(self, expected, actual, what="dimension"):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what} mismatch: expected {expected}, got {actual}")


class NumericalError(MixRelabelError, ArithmeticError):
    """A computation produced non-finite or otherwise unusable values."""
