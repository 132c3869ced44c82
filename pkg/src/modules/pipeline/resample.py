__all__ = ["uniform_grid", "temporal_resample"]

import numpy as np

from src.exceptions import PreprocessingError
from src.modules.pipeline.study import CtpStudy
from src.modules.tensor.tensor import AxisRole


def uniform_grid(schedule: list[float], dt: float = 1.0) -> np.ndarray:
    """
    Instants t0, t0 + dt, ... up to the last acquisition; the last instant is appended when it is off the grid.
    """
    first, last = schedule[0], schedule[-1]
    tolerance = 1e-9 * max(1.0, abs(last))
    steps = int(np.floor((last - first) / dt + 1e-9))
    grid = first + dt * np.arange(steps + 1)
    if last - grid[-1] > tolerance:
        return np.append(grid, last)
    grid[-1] = last
    return grid


def _weights(schedule: np.ndarray, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Left node, right node and the right-node weight of every grid instant."""
    right = np.clip(np.searchsorted(schedule, grid, side="right"), 1, len(schedule) - 1)
    left = right - 1
    fraction = (grid - schedule[left]) / (schedule[right] - schedule[left])
    return left, right, np.clip(fraction, 0.0, 1.0)


def temporal_resample(study: CtpStudy, target_dt: float = 1.0) -> CtpStudy:
    """
    Linear interpolation of every voxel's time-density curve onto a uniform grid with step `target_dt` seconds.
    Frames that fall on an acquisition instant are copied unchanged.
    """
    schedule = study.meta.time_schedule
    if len(schedule) < 2:
        raise PreprocessingError(f"Temporal resampling needs at least 2 time points, got {len(schedule)}")
    if target_dt <= 0:
        raise PreprocessingError(f"Target time step must be positive, got {target_dt}")

    nodes = np.asarray(schedule, dtype=np.float64)
    grid = uniform_grid(schedule, target_dt)
    if len(grid) == len(nodes) and np.array_equal(grid, nodes):
        return study

    left, right, fraction = _weights(nodes, grid)
    data = study.raw.data
    axis = study.raw.axis(AxisRole.TIME)
    lo, hi = np.take(data, left, axis=axis), np.take(data, right, axis=axis)
    shape = [1] * data.ndim
    shape[axis] = len(grid)
    w = fraction.reshape(shape)
    resampled = (1.0 - w) * lo + w * hi
    # exact copies on the acquisition instants
    exact_left, exact_right = fraction == 0.0, fraction == 1.0
    resampled[..., exact_left] = lo[..., exact_left]
    resampled[..., exact_right] = hi[..., exact_right]

    meta = study.meta.model_copy(update={"time_schedule": [float(t) for t in grid]})
    return study.replace(raw=study.raw.with_data(resampled.astype(data.dtype, copy=False)), meta=meta)
