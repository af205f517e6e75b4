"""Exception types shared across the package.

The split matters for the CLI: validation and format problems map to
exit code 2 (bad input), numeric failures map to exit code 1.
"""


class DivselError(Exception):
    """Base class for all package errors."""


class ValidationError(DivselError):
    """An input violates a documented precondition or invariant."""


class FormatError(ValidationError):
    """A file does not match its declared on-disk format."""


class LengthMismatchError(FormatError):
    """Declared payload size disagrees with the bytes actually present."""


class DegenerateInputError(ValidationError):
    """An input row is unusable, e.g. a zero vector sent to row normalization."""


class NumericError(DivselError):
    """A computation produced non-finite values or a factorization failed."""
