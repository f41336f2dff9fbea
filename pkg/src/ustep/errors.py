"""Exception types shared across the package."""


class UstepError(Exception):
    """Base class for package errors."""


class DimensionError(UstepError, ValueError):
    """Operand shapes do not match what an operation requires."""


class ContractError(UstepError, RuntimeError):
    """A caller violated an operation's precondition."""


class ConfigError(UstepError, ValueError):
    """Invalid configuration values."""


class FormatError(UstepError, ValueError):
    """Malformed dataset, checkpoint or report file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
