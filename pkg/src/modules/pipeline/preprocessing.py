"""
Pre-processing chain: HU conversion, brain mask, enhancement (histogram equalization then gamma), z-score and
temporal resampling, in that order. Each enhancement step can be switched off.
"""

__all__ = [
    "hu_convert",
    "brain_mask",
    "EnhanceResult",
    "enhance",
    "zscore",
    "PreprocessResult",
    "Preprocessor",
    "ablation_grid",
]

import itertools
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from src.config_schema import PreprocessConfig
from src.exceptions import EmptyBrainMaskError, ShapeError, ZeroVarianceError
from src.logging_ import logger
from src.modules.pipeline.resample import temporal_resample
from src.modules.pipeline.study import CtpStudy
from src.modules.tensor.tensor import AxisRole, Tensor
from src.modules.tensor.volume import VolumeMeta


def hu_convert(raw: Tensor, meta: VolumeMeta) -> Tensor:
    return raw.with_data(raw.data.astype(np.float64) * meta.rescale_slope + meta.rescale_intercept)


def _spatial(volume: Tensor) -> np.ndarray:
    """(X, Y, Z) view: the temporal mean of a 4D study, or the volume itself."""
    if volume.has(AxisRole.TIME):
        return volume.data.mean(axis=volume.axis(AxisRole.TIME))
    return volume.data


def brain_mask(volume: Tensor, hu_window: tuple[float, float] = (0.0, 100.0)) -> np.ndarray:
    """
    Largest connected component of voxels whose (temporal mean) HU lies in `hu_window`, with holes filled.
    """
    spatial = _spatial(volume)
    low, high = hu_window
    candidates = (spatial >= low) & (spatial <= high)
    labels, count = ndimage.label(candidates)
    if count == 0:
        raise EmptyBrainMaskError()
    sizes = np.bincount(labels.ravel())[1:]
    largest = labels == 1 + int(np.argmax(sizes))
    return ndimage.binary_fill_holes(largest)


def _broadcast_mask(volume: Tensor, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if volume.has(AxisRole.TIME):
        mask = np.expand_dims(mask, volume.axis(AxisRole.TIME))
    try:
        return np.broadcast_to(mask, volume.dims)
    except ValueError:
        raise ShapeError(f"Mask of shape {mask.shape} does not fit volume {volume.dims}") from None


class EnhanceResult(NamedTuple):
    volume: Tensor
    passthrough: bool
    "Masked intensities were constant, so the input was returned unchanged"


def equalize_histogram(values: np.ndarray, bins: int = 256) -> np.ndarray:
    """
    Histogram equalization of values in [0, 1]: the lowest occupied bin maps to 0, the highest to 1.
    """
    index = np.minimum((values * bins).astype(np.int64), bins - 1)
    cdf = np.cumsum(np.bincount(index, minlength=bins)).astype(np.float64)
    cdf_min = cdf[index.min()]
    if cdf[-1] == cdf_min:
        return np.zeros_like(values)
    return (cdf[index] - cdf_min) / (cdf[-1] - cdf_min)


def enhance(
    volume: Tensor,
    mask: np.ndarray,
    equalize: bool = True,
    gamma: float | None = 0.5,
    bins: int = 256,
) -> EnhanceResult:
    """
    Min-max normalize the masked voxels to [0, 1], equalize their histogram, then apply v -> v ** gamma.
    Voxels outside the mask are set to 0.
    """
    inside = _broadcast_mask(volume, mask)
    values = volume.data[inside].astype(np.float64)
    if not values.size:
        raise EmptyBrainMaskError()
    low, high = values.min(), values.max()
    if high == low:
        logger.warning("Masked intensities are constant; enhancement skipped")
        return EnhanceResult(volume, True)

    values = (values - low) / (high - low)
    if equalize:
        values = equalize_histogram(values, bins)
    if gamma is not None:
        values = values**gamma
    out = np.zeros(volume.dims, dtype=np.float64)
    out[inside] = values
    return EnhanceResult(volume.with_data(out), False)


def zscore(volume: Tensor, mask: np.ndarray) -> Tensor:
    """
    (v - mean) / sd with statistics over the masked voxels of every frame; voxels outside the mask are set to 0.
    """
    inside = _broadcast_mask(volume, mask)
    values = volume.data[inside].astype(np.float64)
    if not values.size:
        raise EmptyBrainMaskError()
    sd = values.std()
    if sd == 0:
        raise ZeroVarianceError()
    out = np.zeros(volume.dims, dtype=np.float64)
    out[inside] = (values - values.mean()) / sd
    return volume.with_data(out)


class PreprocessResult(NamedTuple):
    study: CtpStudy
    brain_mask: np.ndarray
    flags: dict[str, bool]


class Preprocessor:
    config: PreprocessConfig

    def __init__(self, config: PreprocessConfig | None = None):
        self.config = config or PreprocessConfig()

    def run(self, study: CtpStudy) -> PreprocessResult:
        cfg = self.config
        volume = hu_convert(study.raw, study.meta)
        mask = brain_mask(volume, cfg.hu_window)
        flags = {
            "histogram_equalization": cfg.histogram_equalization,
            "gamma_correction": cfg.gamma_correction,
            "zscore": cfg.zscore,
            "resample": cfg.resample,
            "enhancement_passthrough": False,
        }

        if cfg.histogram_equalization or cfg.gamma_correction:
            result = enhance(
                volume,
                mask,
                equalize=cfg.histogram_equalization,
                gamma=cfg.gamma if cfg.gamma_correction else None,
                bins=cfg.histogram_bins,
            )
            volume = result.volume
            flags["enhancement_passthrough"] = result.passthrough
        if cfg.zscore:
            volume = zscore(volume, mask)
        volume = volume.with_data(np.where(_broadcast_mask(volume, mask), volume.data, 0.0))

        # values are in HU units or normalized from here on
        meta = study.meta.model_copy(update={"rescale_slope": 1.0, "rescale_intercept": 0.0})
        processed = study.replace(raw=volume, meta=meta)
        if cfg.resample:
            processed = temporal_resample(processed, cfg.target_dt_s)
        logger.info(f"Preprocessed {study.patient_id or 'study'}: {flags}")
        return PreprocessResult(processed, mask, flags)


def ablation_grid(base: PreprocessConfig | None = None) -> list[PreprocessConfig]:
    """
    Every on/off combination of equalization, gamma, z-score and resampling (16 configurations).
    """
    base = base or PreprocessConfig()
    return [
        base.model_copy(update={"histogram_equalization": he, "gamma_correction": g, "zscore": z, "resample": r})
        for he, g, z, r in itertools.product((True, False), repeat=4)
    ]
