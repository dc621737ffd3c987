"""Exception types shared across the package."""


class ZPressError(Exception):
    """Base class for all package errors."""


class InvalidInput(ZPressError, ValueError):
    pass


class ShapeError(ZPressError, ValueError):
    pass


class ConfigError(ZPressError, ValueError):
    pass


class CheckFailed(ZPressError, RuntimeError):
    pass


class TrainingDiverged(ZPressError, RuntimeError):
    """Raised when a training step produces a non-finite loss.

    ``checkpoint`` holds the last checkpoint whose loss was finite.
    """

    def __init__(self, message, checkpoint=None, step=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.step = step
