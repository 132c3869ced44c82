__all__ = ["ClassProbImage", "LabelImage", "WeightMap", "NUM_CLASSES"]

import numpy as np
from numpy.typing import ArrayLike

from src.exceptions import ShapeError
from src.modules.tensor.volume import OUTSIDE_BRAIN, TissueClass

NUM_CLASSES = len(TissueClass)


def _evaluable(mask: ArrayLike | None, shape: tuple[int, int]) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise ShapeError(f"Mask of shape {mask.shape} does not match image extents {shape}")
    return mask


class ClassProbImage:
    """
    Per-pixel probabilities over (healthy, penumbra, core), shape (X, Y, 3), with a mask of evaluable pixels.
    """

    probs: np.ndarray
    mask: np.ndarray

    __slots__ = ("probs", "mask")

    def __init__(self, probs: ArrayLike, mask: ArrayLike | None = None, atol: float = 1e-6):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 3 or probs.shape[-1] != NUM_CLASSES:
            raise ShapeError(f"Probability image must be (X, Y, {NUM_CLASSES}), got {probs.shape}")
        mask = _evaluable(mask, probs.shape[:2])
        inside = probs[mask]
        if inside.size and (inside.min() < -atol or inside.max() > 1 + atol):
            raise ShapeError("Probabilities must lie in [0, 1]")
        if inside.size and np.abs(inside.sum(axis=-1) - 1).max() > atol:
            raise ShapeError("Probabilities must sum to 1 on every evaluable pixel")
        self.probs = probs
        self.mask = mask

    @property
    def extents(self) -> tuple[int, int]:
        return self.probs.shape[:2]

    def class_map(self) -> np.ndarray:
        return self.probs.argmax(axis=-1).astype(np.uint8)

    def evaluable(self) -> np.ndarray:
        """(P, 3) probabilities of the evaluable pixels."""
        return self.probs[self.mask]


class LabelImage:
    """
    One-hot labels (X, Y, 3) over evaluable pixels; non-evaluable pixels are all-zero.
    """

    onehot: np.ndarray
    mask: np.ndarray

    __slots__ = ("onehot", "mask")

    def __init__(self, onehot: ArrayLike, mask: ArrayLike | None = None):
        onehot = np.asarray(onehot, dtype=np.float64)
        if onehot.ndim != 3 or onehot.shape[-1] != NUM_CLASSES:
            raise ShapeError(f"Label image must be (X, Y, {NUM_CLASSES}), got {onehot.shape}")
        mask = _evaluable(mask, onehot.shape[:2])
        inside = onehot[mask]
        if not np.isin(inside, (0.0, 1.0)).all() or not (inside.sum(axis=-1) == 1).all():
            raise ShapeError("Every evaluable pixel needs exactly one class")
        onehot = np.where(mask[..., None], onehot, 0.0)
        self.onehot = onehot
        self.mask = mask

    @classmethod
    def from_class_map(cls, class_map: ArrayLike) -> "LabelImage":
        """
        Build from a 2D label map where 255 marks pixels outside the brain.
        """
        class_map = np.asarray(class_map)
        mask = class_map != OUTSIDE_BRAIN
        onehot = np.zeros((*class_map.shape, NUM_CLASSES))
        rows, cols = np.nonzero(mask)
        onehot[rows, cols, class_map[mask].astype(int)] = 1.0
        return cls(onehot, mask)

    @property
    def extents(self) -> tuple[int, int]:
        return self.onehot.shape[:2]

    def class_map(self) -> np.ndarray:
        labels = self.onehot.argmax(axis=-1).astype(np.uint8)
        labels[~self.mask] = OUTSIDE_BRAIN
        return labels

    def evaluable(self) -> np.ndarray:
        return self.onehot[self.mask]


class WeightMap:
    """
    Nonnegative per-pixel, per-class weights (X, Y, 3).
    """

    weights: np.ndarray

    __slots__ = ("weights",)

    def __init__(self, weights: ArrayLike):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 3 or weights.shape[-1] != NUM_CLASSES:
            raise ShapeError(f"Weight map must be (X, Y, {NUM_CLASSES}), got {weights.shape}")
        if not np.isfinite(weights).all() or (weights < 0).any():
            raise ShapeError("Weights must be finite and nonnegative")
        self.weights = weights

    @classmethod
    def uniform(cls, extents: tuple[int, int], value: float = 1.0) -> "WeightMap":
        return cls(np.full((*extents, NUM_CLASSES), value))

    @classmethod
    def from_class_weights(cls, extents: tuple[int, int], class_weights: ArrayLike) -> "WeightMap":
        class_weights = np.asarray(class_weights, dtype=np.float64)
        return cls(np.broadcast_to(class_weights, (*extents, NUM_CLASSES)).copy())

    @staticmethod
    def inverse_frequency(class_maps: list[np.ndarray]) -> np.ndarray:
        """
        Class weights N / (|C| * N_c) over the evaluable pixels of the given label maps. Absent classes get 1.
        """
        counts = np.zeros(NUM_CLASSES)
        for class_map in class_maps:
            class_map = np.asarray(class_map)
            values = class_map[class_map != OUTSIDE_BRAIN].astype(int)
            counts += np.bincount(values, minlength=NUM_CLASSES)[:NUM_CLASSES]
        total = counts.sum()
        weights = np.ones(NUM_CLASSES)
        present = counts > 0
        weights[present] = total / (NUM_CLASSES * counts[present])
        return weights

    def evaluable(self, mask: np.ndarray) -> np.ndarray:
        return self.weights[mask]
