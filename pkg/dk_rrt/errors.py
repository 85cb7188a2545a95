"""
Exception types raised across the package.
"""
from typing import Optional


class DKRRTError(Exception):
    """Base class for every error raised by dk_rrt."""


class DimensionMismatchError(DKRRTError, ValueError):
    pass


class EmptyDatasetError(DKRRTError, ValueError):
    pass


class InvalidInputError(DKRRTError, ValueError):
    pass


class UnsupportedOperationError(DKRRTError, TypeError):
    pass


class ConditioningError(DKRRTError, ArithmeticError):
    pass


class HorizonExceededError(DKRRTError, IndexError):
    pass


class DivergenceError(DKRRTError, ArithmeticError):
    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"Prediction diverged at step {step}")


class TrainingDivergedError(DKRRTError, ArithmeticError):
    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"Training loss became non-finite at epoch {epoch}")


class ConfigError(DKRRTError):
    def __init__(self, path, message: str, line: Optional[int] = None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")
