"""Exception types shared across the package."""


class MpaeError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(MpaeError):
    """Invalid configuration, arguments, or input data."""


class FormatError(MpaeError):
    """Malformed array container or checkpoint file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedDtypeError(FormatError):
    """Array container dtype code outside the supported set."""


class NumericalError(MpaeError):
    """Numerical check failed (non-finite values, gradient mismatch)."""


class CheckpointMismatchError(ValidationError):
    """Checkpoint contents incompatible with the requested configuration."""
