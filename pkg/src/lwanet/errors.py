"""Exception types shared across the package."""


class LwanetError(Exception):
    """Base class for all package-specific failures."""


class ShapeError(LwanetError, ValueError):
    """Tensor shapes are inconsistent with an operation's contract."""


class ConfigError(LwanetError, ValueError):
    """A configuration value or key is invalid."""


class DataError(LwanetError, ValueError):
    """A dataset file or layout is invalid."""


class WeightFormatError(LwanetError, ValueError):
    """A weight container file is malformed or inconsistent."""


class TrainingDiverged(LwanetError, RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, step, lr):
        super().__init__(f"non-finite loss at step {step} (lr={lr:g})")
        self.step = step
        self.lr = lr
