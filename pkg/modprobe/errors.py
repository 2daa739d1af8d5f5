"""Exception types raised across modprobe.

Each class also derives from the closest builtin so callers can catch either.
"""


class ModprobeError(Exception):
    """Base class for all modprobe errors."""


class InvalidArgumentError(ModprobeError, ValueError):
    """An argument violates an operation's precondition."""


class NumericFailureError(ModprobeError, ArithmeticError):
    """A numerical routine failed to converge or met non-finite values."""


class UndefinedCorrelationError(ModprobeError, ValueError):
    """A rank correlation was requested for a constant sequence."""


class UnsupportedError(ModprobeError, ValueError):
    """The operation is not defined for this kind of layer or model."""


class FormatError(ModprobeError, ValueError):
    """A model, dataset or text artifact could not be parsed."""

    def __init__(self, message: str, offset: int | None = None, tensor: str | None = None):
        self.offset = offset
        self.tensor = tensor
        if offset is not None:
            message = f"{message} (offset {offset})"
        super().__init__(message)


class StageError(ModprobeError, RuntimeError):
    """A pipeline stage aborted."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {message}")
