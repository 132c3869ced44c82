__all__ = ["SlicePrediction", "predict_slice", "predict_slices", "predict_volume"]

from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple

import numpy as np

from src.exceptions import ConfigurationError, ShapeError
from src.modules.networks.layers import Module
from src.modules.networks.samples import SliceSample, assemble_window
from src.modules.tensor.tensor import Tensor
from src.modules.tensor.volume import MaskVolume, VolumeMeta


class SlicePrediction(NamedTuple):
    probs: np.ndarray
    "(X, Y, 3) mean class probabilities"
    class_map: np.ndarray
    "(X, Y) argmax over healthy, penumbra, core"
    variance: np.ndarray | None
    "(X, Y, 3) variance over Monte Carlo samples, None for a single deterministic pass"


def predict_slice(
    network: Module, sample: SliceSample | np.ndarray, mc_samples: int = 1, seed: int = 0, slice_index: int = 0
) -> SlicePrediction:
    """
    Class probabilities of the center slice of an (X, Y, 3, T) window.

    With `mc_samples` > 1, dropout stays active and the probabilities are averaged over passes whose random streams
    are seeded from (seed, slice_index, sample index).
    """
    if mc_samples < 1:
        raise ConfigurationError(f"mc_samples must be >= 1, got {mc_samples}")
    if isinstance(sample, SliceSample):
        slice_index = sample.slice_index
        window = sample.input
    else:
        window = np.asarray(sample)
    x = window[None, ..., None]

    if mc_samples == 1:
        probs = network(x, training=False).value[0].astype(np.float64)
        variance = None
    else:
        draws = [
            network(x, training=True, rng=np.random.default_rng([seed, slice_index, s])).value[0]
            for s in range(mc_samples)
        ]
        stacked = np.stack(draws).astype(np.float64)
        probs, variance = stacked.mean(axis=0), stacked.var(axis=0)
    return SlicePrediction(probs, probs.argmax(axis=-1).astype(np.uint8), variance)


def predict_slices(
    network: Module, volume: Tensor | np.ndarray, mc_samples: int = 1, seed: int = 0, jobs: int = 1
) -> list[SlicePrediction]:
    """
    Predict every slice of an (X, Y, Z, T) volume through the sliding three-slice window.
    """
    data = volume.data if isinstance(volume, Tensor) else np.asarray(volume)
    depth = data.shape[2]

    def run(i: int) -> SlicePrediction:
        return predict_slice(network, assemble_window(data, i), mc_samples, seed, slice_index=i)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run, range(depth)))
    return [run(i) for i in range(depth)]


def predict_volume(
    network: Module,
    volume: Tensor | np.ndarray,
    meta: VolumeMeta | None = None,
    mc_samples: int = 1,
    seed: int = 0,
    brain_mask: np.ndarray | None = None,
    jobs: int = 1,
) -> MaskVolume:
    """
    Stack the per-slice class maps into an (X, Y, Z) mask; voxels outside `brain_mask` are labelled 255.
    """
    data = volume.data if isinstance(volume, Tensor) else np.asarray(volume)
    if meta is not None and meta.time_schedule and len(meta.time_schedule) != data.shape[3]:
        raise ShapeError(f"Volume has {data.shape[3]} frames but its schedule lists {len(meta.time_schedule)}")
    predictions = predict_slices(network, data, mc_samples, seed, jobs)
    class_map = np.stack([p.class_map for p in predictions], axis=2)
    return MaskVolume.from_class_map(class_map, brain_mask)
