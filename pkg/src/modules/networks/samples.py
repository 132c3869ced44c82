__all__ = ["SliceSample", "Batch", "collate", "assemble_window"]

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from src.config_schema import Group
from src.exceptions import BoundsError, ShapeError
from src.modules.metrics.images import NUM_CLASSES
from src.modules.tensor.tensor import Tensor
from src.modules.tensor.volume import OUTSIDE_BRAIN


def assemble_window(volume: Tensor | np.ndarray, i: int) -> np.ndarray:
    """
    (X, Y, 3, T) window of slices i-1, i, i+1 of an (X, Y, Z, T) volume. A missing neighbor at the first or last
    slice is replaced by slice i itself.
    """
    data = volume.data if isinstance(volume, Tensor) else np.asarray(volume)
    if data.ndim != 4:
        raise ShapeError(f"Expected an (X, Y, Z, T) volume, got shape {data.shape}")
    depth = data.shape[2]
    if not 0 <= i < depth:
        raise BoundsError(2, i, depth)
    neighbors = [i - 1 if i > 0 else i, i, i + 1 if i < depth - 1 else i]
    return data[:, :, neighbors, :]


@dataclass
class SliceSample:
    input: np.ndarray
    "Window (X, Y, 3, T) centered on the target slice"
    target: np.ndarray
    "Class map (X, Y) of the center slice; 255 outside the brain"
    weight_map: np.ndarray | None = None
    "Per-pixel, per-class weights (X, Y, 3)"
    multiplier: float = 1.0
    "Loss multiplier of this sample"
    patient_id: str = ""
    slice_index: int = 0
    group: Group = Group.LVO

    def __post_init__(self):
        if self.input.ndim != 4 or self.input.shape[2] != 3:
            raise ShapeError(f"Sample input must be (X, Y, 3, T), got {self.input.shape}")
        if self.target.shape != self.input.shape[:2]:
            raise ShapeError(f"Target {self.target.shape} does not match input extents {self.input.shape[:2]}")

    @property
    def mask(self) -> np.ndarray:
        return self.target != OUTSIDE_BRAIN


@dataclass
class Batch:
    inputs: np.ndarray
    "(N, X, Y, 3, T, 1)"
    targets: np.ndarray
    "One-hot (N, X, Y, 3), zero outside the brain"
    masks: np.ndarray
    "(N, X, Y)"
    weights: np.ndarray | None
    "(N, X, Y, 3)"
    multipliers: np.ndarray
    "(N,)"


def collate(samples: Sequence[SliceSample], dtype: np.dtype | str | None = None) -> Batch:
    if not samples:
        raise ShapeError("Cannot collate an empty batch")
    inputs = np.stack([s.input for s in samples])[..., None]
    if dtype is not None:
        inputs = inputs.astype(dtype)
    masks = np.stack([s.mask for s in samples])
    targets = np.zeros((*masks.shape, NUM_CLASSES))
    for n, sample in enumerate(samples):
        rows, cols = np.nonzero(masks[n])
        targets[n, rows, cols, sample.target[rows, cols].astype(int)] = 1.0
    weights = None
    if any(s.weight_map is not None for s in samples):
        weights = np.stack(
            [s.weight_map if s.weight_map is not None else np.ones((*s.target.shape, NUM_CLASSES)) for s in samples]
        )
    multipliers = np.array([s.multiplier for s in samples], dtype=np.float64)
    return Batch(inputs, targets, masks, weights, multipliers)
