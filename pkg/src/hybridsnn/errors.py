"""Exception types raised across the package."""


class HybridSNNError(Exception):
    """Base class for all package errors."""


class DimensionError(HybridSNNError, ValueError):
    pass


class ConfigurationError(HybridSNNError, ValueError):
    pass


class NumericError(HybridSNNError, ArithmeticError):
    pass


class FormatError(HybridSNNError, ValueError):
    pass


class DataError(HybridSNNError, ValueError):
    pass


class StateError(HybridSNNError, RuntimeError):
    pass


class CalibrationError(HybridSNNError, RuntimeError):
    pass


class TrainingError(HybridSNNError, RuntimeError):
    """Training diverged. ``epoch`` holds the epoch index where it happened."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
