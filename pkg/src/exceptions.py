__all__ = [
    "CustomError",
    "ShapeError",
    "BoundsError",
    "ConfigurationError",
    "StateError",
    "FormatError",
    "PhantomSpecError",
    "PreprocessingError",
    "EmptyBrainMaskError",
    "ZeroVarianceError",
    "TrainingDivergedError",
    "DatasetError",
]

from typing import ClassVar


class CustomError(Exception):
    exit_code: ClassVar[int] = 1
    description: ClassVar[str] = "Unexpected error"

    def __init__(self, detail: str | None = None):
        self.detail = detail or self.description
        super().__init__(self.detail)


class ShapeError(CustomError, ValueError):
    """
    Tensor extents do not fit the operation
    """

    exit_code = 2
    description = "Incompatible tensor shapes"


class BoundsError(CustomError, IndexError):
    """
    Index outside of the tensor extents
    """

    exit_code = 2
    description = "Index out of bounds"

    def __init__(self, axis: int, index: int, extent: int):
        self.axis = axis
        self.index = index
        self.extent = extent
        super().__init__(f"Index {index} out of bounds for axis {axis} with extent {extent}")


class ConfigurationError(CustomError, ValueError):
    """
    Invalid configuration document or option
    """

    exit_code = 2
    description = "Invalid configuration"


class StateError(CustomError, RuntimeError):
    """
    Operation called in the wrong order
    """

    exit_code = 1
    description = "Invalid state for this operation"


class FormatError(CustomError, ValueError):
    """
    Malformed binary file
    """

    exit_code = 1
    description = "Malformed file"

    def __init__(self, detail: str, offset: int):
        self.offset = offset
        super().__init__(f"{detail} (at byte offset {offset})")


class PhantomSpecError(ConfigurationError):
    description = "Invalid phantom specification"


class PreprocessingError(CustomError, ValueError):
    exit_code = 1
    description = "Preprocessing failed"


class EmptyBrainMaskError(PreprocessingError):
    description = "no brain tissue in HU window"


class ZeroVarianceError(PreprocessingError):
    description = "Standard deviation of masked voxels is zero"


class TrainingDivergedError(CustomError, ArithmeticError):
    """
    Loss became NaN or infinite during training
    """

    exit_code = 1
    description = "Training diverged"

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"Non-finite loss {loss!r} at epoch {epoch}, batch {batch}")


class DatasetError(CustomError, ValueError):
    exit_code = 2
    description = "Dataset is empty or inconsistent"
