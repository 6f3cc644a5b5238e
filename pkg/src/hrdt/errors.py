"""Exception types shared across the package."""


class HrdtError(Exception):
    """Base class for all package errors."""


class ShapeError(HrdtError, ValueError):
    """Tensor shapes or dtypes incompatible with an operation."""


class ConfigError(HrdtError, ValueError):
    """Invalid configuration value or unknown config key."""


class TapeError(HrdtError, RuntimeError):
    """Misuse of the autodiff tape (non-scalar loss, loss not recorded, ...)."""


class CorruptBlobError(HrdtError, IOError):
    """Tensor blob or checkpoint bytes failed a magic/length check."""


class DegenerateRotationError(HrdtError, ValueError):
    """6D rotation input whose columns cannot be orthonormalized."""


class EmbodimentMismatchError(HrdtError, ValueError):
    """Checkpoint, dataset, or environment disagree on the action space."""


class ExpertFailure(HrdtError, RuntimeError):
    """Scripted expert could not complete a task within the retry budget."""


class TrainingDiverged(HrdtError, RuntimeError):
    """Loss became non-finite during training."""
