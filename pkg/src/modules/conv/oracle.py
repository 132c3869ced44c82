"""
Brute-force convolution, the reference for the im2col engine.
"""

__all__ = ["direct_convolution", "grouped_reference"]

from collections.abc import Sequence

import numpy as np

from src.exceptions import ShapeError
from src.modules.conv.functional import LEGAL_NEIGHBORS


def direct_convolution(image: np.ndarray, kernel: np.ndarray, padding: Sequence[int] | None = None) -> np.ndarray:
    """
    Valid-mode convolution of any rank, one output element at a time, in 64-bit.

    out(x) = sum_i H(i) * I(x + k - 1 - i)
    """
    image = np.asarray(image, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if image.ndim != kernel.ndim:
        raise ShapeError(f"Image rank {image.ndim} differs from kernel rank {kernel.ndim}")
    if padding is not None and any(padding):
        image = np.pad(image, [(p, p) for p in padding])
    out_shape = tuple(s - k + 1 for s, k in zip(image.shape, kernel.shape))
    if any(o < 1 for o in out_shape):
        raise ShapeError(f"Kernel {kernel.shape} is larger than the input {image.shape}")

    flipped = kernel[(slice(None, None, -1),) * kernel.ndim]
    out = np.empty(out_shape)
    for position in np.ndindex(*out_shape):
        window = image[tuple(slice(p, p + k) for p, k in zip(position, kernel.shape))]
        out[position] = np.sum(window * flipped)
    return out


def grouped_reference(volumes: np.ndarray, kernels: Sequence[np.ndarray], padding: Sequence[int]) -> np.ndarray:
    """
    Grouped 4D layer evaluated literally: per group, convolve each legal neighbor slice and sum.

    `volumes` is (X, Y, 3, T); `kernels` are three (w, h, p) kernels; `padding` is (X, Y, T) zero-fill.
    """
    volumes = np.asarray(volumes, dtype=np.float64)
    if volumes.ndim != 4 or volumes.shape[2] != 3:
        raise ShapeError(f"Expected (X, Y, 3, T) volumes, got {volumes.shape}")
    groups = []
    for j in range(3):
        per_volume = [direct_convolution(volumes[:, :, m], kernels[j], padding) for m in LEGAL_NEIGHBORS[j]]
        groups.append(np.sum(per_volume, axis=0))
    return np.stack(groups, axis=2)
