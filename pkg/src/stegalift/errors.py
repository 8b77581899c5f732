"""Exception types shared across the package."""


class StegaLiftError(Exception):
    """Base class for all stegalift errors."""


class DimensionError(StegaLiftError, ValueError):
    """Shapes of the operands are incompatible."""

    def __init__(self, message, *shapes):
        if shapes:
            message = "%s (shapes: %s)" % (message, ", ".join(str(tuple(s)) for s in shapes))
        super().__init__(message)


class ContractError(StegaLiftError, ValueError):
    """A documented precondition of an operation was violated."""


class ConfigError(StegaLiftError, ValueError):
    """Invalid or unknown configuration input."""


class NumericError(StegaLiftError, RuntimeError):
    """A computation produced non-finite values or diverged."""
