"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Layer chain of a network is structurally inconsistent."""


class DimensionError(ValueError):
    """An array's shape does not match what an operation expects."""


class ConfigError(ValueError):
    """An operation was configured inconsistently with its inputs."""


class DataError(ValueError):
    """Dataset or input contents violate their contract."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}"
        )


class ModelFormatError(ValueError):
    """A model file cannot be parsed."""


class ModelVersionError(ModelFormatError):
    """A model file declares an unsupported version."""


class IdxFormatError(ValueError):
    """An IDX file does not match the expected container layout."""


class IdxTruncationError(IdxFormatError):
    """An IDX file ended before its declared payload."""
