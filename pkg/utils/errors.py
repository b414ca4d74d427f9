class SynthMixError(Exception):
    """Base exception for the synthmix pipeline."""

    pass


class FormatError(SynthMixError, ValueError):
    """Raised when a file or payload does not follow its declared format."""

    pass


class ConsistencyError(SynthMixError, ValueError):
    """Raised when two inputs that must agree (counts, shapes, labels) do not."""

    pass


class RangeError(SynthMixError, ValueError):
    """Raised when a scalar argument lies outside its admissible range."""

    pass


class ShapeError(SynthMixError, ValueError):
    """Raised when image data does not match the expected shape contract."""

    pass


class ValidationError(SynthMixError, ValueError):
    """Raised when an experiment configuration is rejected before any work starts."""

    pass


class CapacityError(SynthMixError, ValueError):
    """Raised when a source holds fewer samples than a quota requires."""

    def __init__(self, message: str, class_index: int | None = None, shortfall: int | None = None):
        self.class_index = class_index
        self.shortfall = shortfall
        super().__init__(message)


class NumericalError(SynthMixError, ArithmeticError):
    """Raised when a numerical routine produces an unusable result."""

    pass


# Shared error messages
IDX_IMAGES_MAGIC = "IDX images magic mismatch"
IDX_LABELS_MAGIC = "IDX labels magic mismatch"
TRUNCATED_FILE = "file is truncated"


class DivergenceError(SynthMixError, ArithmeticError):
    """Error raised when a training loss becomes non-finite."""

    def __init__(self, stage: str, epoch: int, batch: int, loss: float):
        self.stage = stage
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"[{stage}] non-finite loss {loss!r} at epoch {epoch}, batch {batch}")


__all__ = [
    "SynthMixError",
    "FormatError",
    "ConsistencyError",
    "RangeError",
    "ShapeError",
    "ValidationError",
    "CapacityError",
    "NumericalError",
    "DivergenceError",
    "IDX_IMAGES_MAGIC",
    "IDX_LABELS_MAGIC",
    "TRUNCATED_FILE",
]
