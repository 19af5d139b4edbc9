"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """Non-finite values, wrong shapes or wrong dimensions."""


class ConfigurationError(ValueError):
    """Incompatible module configuration (e.g. channel counts)."""


class InvalidWindowError(ValueError):
    """A patch window does not fit inside the image plane."""


class InvalidRayError(ValueError):
    """Degenerate ray bounds."""


class DegenerateRotationError(ValueError):
    """A (cos, sin) pair with zero norm."""


class ContractViolationError(ValueError):
    """A caller broke a documented precondition."""


class SamplingExhaustedError(RuntimeError):
    """Camera rejection sampling ran out of attempts."""


class InsufficientSamplesError(ValueError):
    """Too few embeddings for an unbiased estimate."""


class IngestionError(ValueError):
    """A dataset directory could not be loaded."""


class CheckpointCorruptError(IOError):
    """A checkpoint file is truncated or fails its checksum."""


class CheckpointVersionError(IOError):
    """A checkpoint was written by an unsupported format version."""


class ConfigMismatchError(ValueError):
    """A checkpoint does not match the requested model configuration."""


class TrainingDivergedError(FloatingPointError):
    """A training loss became non-finite.

    ``batch_spec`` holds the sampling decisions of the offending batch so
    the failure can be replayed.
    """

    def __init__(self, message, batch_spec=None):
        super().__init__(message)
        self.batch_spec = batch_spec or {}
