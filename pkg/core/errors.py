"""
Exception types shared across SymmCompletion modules
"""


class SymmCompletionError(Exception):
    """Base class for all library errors"""


class SizeError(SymmCompletionError, ValueError):
    """A count does not fit the request (m > count, k > reference size, ...)"""


class DomainError(SymmCompletionError, ValueError):
    """An input lies outside the operation's domain (empty cloud, zero normal, NaN)"""


class ShapeError(SymmCompletionError, ValueError):
    """Array shapes do not line up"""

    def __init__(self, message: str, *shapes):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)


class ConfigError(SymmCompletionError, ValueError):
    """Invalid or unreadable configuration"""


class CheckpointError(SymmCompletionError):
    """Checkpoint file is malformed or does not match the model"""


class PointCloudFormatError(SymmCompletionError, ValueError):
    """Point cloud file could not be parsed"""


class TrainingDivergedError(SymmCompletionError):
    """Loss became NaN/Inf during training"""

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"Training diverged at epoch {epoch}, batch {batch} (loss={loss})")
