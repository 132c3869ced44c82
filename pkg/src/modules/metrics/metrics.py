"""
Evaluation metrics on binary masks: Dice coefficient, Hausdorff distance (mm) and absolute volume difference (ml).
"""

__all__ = ["HausdorffResult", "dice_coeff", "hausdorff_mm", "hausdorff_brute_force", "delta_v_ml"]

import math
from typing import Literal, NamedTuple

import numpy as np
from numpy.typing import ArrayLike
from scipy import ndimage
from scipy.spatial.distance import cdist

from src.exceptions import ShapeError
from src.modules.tensor.volume import VolumeMeta


def _binary(mask: ArrayLike, c: int | None) -> np.ndarray:
    mask = np.asarray(mask)
    return mask == c if c is not None else mask.astype(bool)


def _pair(pred: ArrayLike, gt: ArrayLike, c: int | None) -> tuple[np.ndarray, np.ndarray]:
    a, b = _binary(pred, c), _binary(gt, c)
    if a.shape != b.shape:
        raise ShapeError(f"Mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def dice_coeff(pred_mask: ArrayLike, gt_mask: ArrayLike, c: int | None = None) -> float:
    """
    2|A n B| / (|A| + |B|). With `c`, the masks are label maps and class `c` is compared. Two empty masks score 1.
    """
    a, b = _pair(pred_mask, gt_mask, c)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


class HausdorffResult(NamedTuple):
    value_mm: float
    empty: bool
    "Both masks are empty everywhere"
    skipped_slices: tuple[int, ...]
    "Slices where exactly one of the masks is empty"


def _directed_max(a: np.ndarray, b: np.ndarray, sampling: tuple[float, ...]) -> float:
    distance_to_b = ndimage.distance_transform_edt(~b, sampling=sampling)
    return float(distance_to_b[a].max())


def _symmetric(a: np.ndarray, b: np.ndarray, sampling: tuple[float, ...]) -> float:
    return max(_directed_max(a, b, sampling), _directed_max(b, a, sampling))


def hausdorff_mm(
    pred_mask: ArrayLike,
    gt_mask: ArrayLike,
    meta: VolumeMeta | None = None,
    c: int | None = None,
    mode: Literal["slice", "volume"] = "slice",
) -> HausdorffResult:
    """
    Symmetric Hausdorff distance under the physical spacing of `meta`.

    In "slice" mode the distance is computed per 2D slice and averaged over slices where both masks are present;
    in "volume" mode it is computed once in 3D with the slice thickness as the depth spacing.
    """
    a, b = _pair(pred_mask, gt_mask, c)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if a.ndim != 3:
        raise ShapeError(f"Expected (X, Y) or (X, Y, Z) masks, got shape {a.shape}")
    meta = meta or VolumeMeta(pixel_spacing_mm=1.0, slice_thickness_mm=1.0)
    spacing = meta.spacing_mm

    if not a.any() and not b.any():
        return HausdorffResult(0.0, True, ())

    if mode == "volume":
        if not a.any() or not b.any():
            return HausdorffResult(math.nan, False, tuple(range(a.shape[2])))
        return HausdorffResult(_symmetric(a, b, spacing), False, ())

    values, skipped = [], []
    for z in range(a.shape[2]):
        a_z, b_z = a[:, :, z], b[:, :, z]
        has_a, has_b = a_z.any(), b_z.any()
        if has_a and has_b:
            values.append(_symmetric(a_z, b_z, spacing[:2]))
        elif has_a or has_b:
            skipped.append(z)
    value = float(np.mean(values)) if values else math.nan
    return HausdorffResult(value, False, tuple(skipped))


def hausdorff_brute_force(pred_mask: ArrayLike, gt_mask: ArrayLike, spacing: tuple[float, ...]) -> float:
    """
    All-pairs max-min distance between the foreground points of two non-empty masks.
    """
    a = np.argwhere(np.asarray(pred_mask, dtype=bool)) * np.asarray(spacing)
    b = np.argwhere(np.asarray(gt_mask, dtype=bool)) * np.asarray(spacing)
    if not len(a) or not len(b):
        raise ShapeError("Hausdorff distance needs two non-empty point sets")
    distances = cdist(a, b)
    return float(max(distances.min(axis=1).max(), distances.min(axis=0).max()))


def delta_v_ml(pred_mask: ArrayLike, gt_mask: ArrayLike, meta: VolumeMeta, c: int | None = None) -> float:
    a, b = _pair(pred_mask, gt_mask, c)
    return abs(int(a.sum()) - int(b.sum())) * meta.voxel_volume_mm3 / 1000.0
