"""
Segmentation losses over the evaluable pixels of a probability image.

Every loss has an array routine `*_value_and_grad(x, y, ...)` on (P, 3) arrays of probabilities and one-hot labels
returning the loss and its gradient with respect to `x`. A class that is empty in both prediction and target
contributes nothing (its Tversky index and Dice coefficient count as 1).
"""

__all__ = [
    "WCC_EPSILON",
    "tversky_index",
    "focal_tversky_loss",
    "soft_dice_loss",
    "dice_loss",
    "weighted_cce",
    "loss_value_and_grad",
    "ftl_value_and_grad",
    "sdcl_value_and_grad",
    "dcl_value_and_grad",
    "wcc_value_and_grad",
]

import numpy as np

from src.config_schema import LossConfig
from src.exceptions import ConfigurationError, ShapeError
from src.modules.metrics.images import ClassProbImage, LabelImage, WeightMap

WCC_EPSILON = 1e-7
"Lower clamp of probabilities before the logarithm"


def _check_pair(x: ClassProbImage, y: LabelImage) -> tuple[np.ndarray, np.ndarray]:
    if x.extents != y.extents:
        raise ShapeError(f"Prediction extents {x.extents} differ from target extents {y.extents}")
    mask = x.mask & y.mask
    return x.probs[mask], y.onehot[mask]


def _tversky(x: np.ndarray, y: np.ndarray, alpha: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Per-class Tversky index (3,) and its gradient d TI_c / d x_{i,c} (P, 3).
    """
    tp = (x * y).sum(axis=0)
    fn = ((1 - x) * y).sum(axis=0)
    fp = (x * (1 - y)).sum(axis=0)
    denominator = tp + alpha * fn + beta * fp
    defined = denominator > 0
    safe = np.where(defined, denominator, 1.0)
    ti = np.where(defined, tp / safe, 1.0)
    d_denominator = (1 - alpha - beta) * y + beta
    grad = (y * safe - tp * d_denominator) / safe**2
    return ti, np.where(defined, grad, 0.0)


def tversky_index(x: ClassProbImage, y: LabelImage, c: int, alpha: float = 0.7, beta: float = 0.3) -> float:
    if alpha < 0 or beta < 0:
        raise ConfigurationError("Tversky alpha and beta must be >= 0")
    xs, ys = _check_pair(x, y)
    ti, _ = _tversky(xs, ys, alpha, beta)
    return float(ti[int(c)])


def ftl_value_and_grad(
    x: np.ndarray, y: np.ndarray, alpha: float = 0.7, beta: float = 0.3, gamma: float = 4 / 3
) -> tuple[float, np.ndarray]:
    if gamma < 1:
        raise ConfigurationError(f"Focal Tversky gamma must be >= 1, got {gamma}")
    ti, d_ti = _tversky(x, y, alpha, beta)
    residual = np.clip(1 - ti, 0.0, None)
    exponent = 1 / gamma
    value = float(np.sum(residual**exponent))
    positive = residual > 0
    d_term = np.where(positive, -exponent * np.where(positive, residual, 1.0) ** (exponent - 1), 0.0)
    return value, d_ti * d_term


def sdcl_value_and_grad(x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    numerator = 2 * (x * y).sum(axis=0)
    denominator = (x**2).sum(axis=0) + (y**2).sum(axis=0)
    defined = denominator > 0
    safe = np.where(defined, denominator, 1.0)
    value = float(np.sum(np.where(defined, 1 - numerator / safe, 0.0)))
    grad = -(2 * y * safe - numerator * 2 * x) / safe**2
    return value, np.where(defined, grad, 0.0)


def dcl_value_and_grad(x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    numerator = 2 * (x * y).sum(axis=0)
    denominator = x.sum(axis=0) + y.sum(axis=0)
    defined = denominator > 0
    safe = np.where(defined, denominator, 1.0)
    value = float(np.sum(np.where(defined, 1 - numerator / safe, 0.0)))
    grad = -(2 * y * safe - numerator) / safe**2
    return value, np.where(defined, grad, 0.0)


def wcc_value_and_grad(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[float, np.ndarray]:
    clipped = np.clip(x, WCC_EPSILON, 1.0)
    value = float(-np.sum(y * np.log(clipped) * (w * y)))
    inside = (x >= WCC_EPSILON) & (x <= 1.0)
    grad = np.where(inside, -(y * w * y) / clipped, 0.0)
    return value, grad


def focal_tversky_loss(
    x: ClassProbImage, y: LabelImage, alpha: float = 0.7, beta: float = 0.3, gamma: float = 4 / 3
) -> float:
    xs, ys = _check_pair(x, y)
    return ftl_value_and_grad(xs, ys, alpha, beta, gamma)[0]


def soft_dice_loss(x: ClassProbImage, y: LabelImage) -> float:
    xs, ys = _check_pair(x, y)
    if not len(xs):
        raise ShapeError("No evaluable pixels")
    return sdcl_value_and_grad(xs, ys)[0]


def dice_loss(x: ClassProbImage, y: LabelImage) -> float:
    xs, ys = _check_pair(x, y)
    if not len(xs):
        raise ShapeError("No evaluable pixels")
    return dcl_value_and_grad(xs, ys)[0]


def weighted_cce(x: ClassProbImage, y: LabelImage, w: WeightMap | None = None) -> float:
    mask = x.mask & y.mask
    xs, ys = _check_pair(x, y)
    ws = w.evaluable(mask) if w is not None else np.ones_like(xs)
    return wcc_value_and_grad(xs, ys, ws)[0]


def loss_value_and_grad(
    cfg: LossConfig, x: np.ndarray, y: np.ndarray, w: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """
    Dispatch on `cfg.kind`. Arrays are (P, 3) rows of evaluable pixels.
    """
    match cfg.kind:
        case "ftl":
            return ftl_value_and_grad(x, y, cfg.ftl_alpha, cfg.ftl_beta, cfg.ftl_gamma)
        case "sdcl":
            return sdcl_value_and_grad(x, y)
        case "dcl":
            return dcl_value_and_grad(x, y)
        case "wcc":
            return wcc_value_and_grad(x, y, np.ones_like(x) if w is None else w)
        case _:
            raise ConfigurationError(f"Unknown loss {cfg.kind!r}")
