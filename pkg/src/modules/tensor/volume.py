__all__ = ["TissueClass", "OUTSIDE_BRAIN", "VolumeMeta", "MaskVolume", "clinical_time_schedule"]

from enum import IntEnum

import numpy as np
from pydantic import Field, model_validator

from src._compat import Self
from src.config_schema import SettingBaseModel
from src.exceptions import ShapeError


class TissueClass(IntEnum):
    HEALTHY = 0
    PENUMBRA = 1
    CORE = 2


OUTSIDE_BRAIN = 255
"Mask label of voxels outside the brain"


def clinical_time_schedule() -> list[float]:
    """
    The clinical acquisition: twenty frames every second, then ten frames every two seconds.
    """
    return [float(t) for t in range(20)] + [float(t) for t in range(21, 40, 2)]


class VolumeMeta(SettingBaseModel):
    """Physical description of a CT perfusion study."""

    pixel_spacing_mm: float = Field(0.4258, gt=0)
    "In-plane resolution (mm/pixel)"
    slice_thickness_mm: float = Field(5.0, gt=0)
    "Slice thickness (mm)"
    time_schedule: list[float] = []
    "Acquisition instants (s)"
    rescale_slope: float = 1.0
    "Rescale slope RS"
    rescale_intercept: float = 0.0
    "Rescale intercept RI"

    @model_validator(mode="after")
    def check_schedule(self) -> Self:
        if any(b <= a for a, b in zip(self.time_schedule, self.time_schedule[1:])):
            raise ValueError("time_schedule must be strictly increasing")
        return self

    @property
    def voxel_volume_mm3(self) -> float:
        return self.pixel_spacing_mm**2 * self.slice_thickness_mm

    @property
    def spacing_mm(self) -> tuple[float, float, float]:
        return self.pixel_spacing_mm, self.pixel_spacing_mm, self.slice_thickness_mm


class MaskVolume:
    """
    Per-voxel class labels (X, Y, Z): 0 healthy, 1 penumbra, 2 core, 255 outside the brain.
    """

    labels: np.ndarray

    __slots__ = ("labels",)

    def __init__(self, labels: np.ndarray):
        labels = np.asarray(labels)
        if labels.ndim == 2:
            labels = labels[:, :, None]
        if labels.ndim != 3:
            raise ShapeError(f"Mask volume must be (X, Y, Z), got shape {labels.shape}")
        valid = np.isin(labels, [*map(int, TissueClass), OUTSIDE_BRAIN])
        if not valid.all():
            raise ShapeError(f"Unknown labels {np.unique(labels[~valid]).tolist()} in mask")
        self.labels = labels.astype(np.uint8)

    @classmethod
    def from_class_map(cls, class_map: np.ndarray, brain_mask: np.ndarray | None = None) -> "MaskVolume":
        labels = np.asarray(class_map).astype(np.uint8)
        if brain_mask is not None:
            labels = np.where(brain_mask, labels, OUTSIDE_BRAIN).astype(np.uint8)
        return cls(labels)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.labels.shape

    @property
    def depth(self) -> int:
        return self.labels.shape[2]

    @property
    def brain_mask(self) -> np.ndarray:
        return self.labels != OUTSIDE_BRAIN

    def class_mask(self, c: TissueClass | int) -> np.ndarray:
        return self.labels == int(c)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, MaskVolume) and np.array_equal(self.labels, other.labels)

    __hash__ = None
