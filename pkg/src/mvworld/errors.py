"""Shared error types for the binary file formats and training."""


class FormatError(ValueError):
    """Base class for malformed episode or checkpoint files."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncationError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class TrainingDivergedError(RuntimeError):
    """Raised when training hits a non-finite loss and no fallback exists."""
