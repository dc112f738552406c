"""Exception types raised across the package."""


class HKFlowError(Exception):
    """Base class for every error raised by hkflow."""


class FieldError(HKFlowError, ValueError):
    """Malformed grid or field (shape mismatch, non-finite values, bad axis)."""


class NotPositiveDefinite(HKFlowError):
    """A metric left the positive cone at some node."""

    def __init__(self, message, node=None, min_eig=None):
        super().__init__(message)
        self.node = node
        self.min_eig = min_eig


class StepTooLarge(HKFlowError):
    """Time step exceeds the explicit-stability bound."""


class BadParameter(HKFlowError, ValueError):
    pass


class InsufficientSnapshots(HKFlowError):
    pass


class ZeroVector(HKFlowError, ValueError):
    pass


class MissingRun(HKFlowError):
    pass


class ConfigError(HKFlowError, ValueError):
    pass
