__all__ = ["check_gradients"]

from collections.abc import Callable, Sequence

import numpy as np

from src.modules.autodiff.graph import Node, Parameter, backpropagate


def check_gradients(
    fn: Callable[[], Node],
    params: Sequence[Parameter],
    n_coords: int = 20,
    step: float = 1e-3,
    seed: int = 0,
    atol: float = 1e-8,
) -> float:
    """
    Largest relative error between backpropagated and central-difference gradients.

    `fn` rebuilds the graph from the current parameter values. Non-scalar outputs are reduced with a fixed random
    projection. Up to `n_coords` coordinates are sampled per parameter.
    """
    rng = np.random.default_rng(seed)
    out = fn()
    projection = rng.standard_normal(out.shape) if out.value.ndim else np.ones(())

    def objective() -> float:
        return float(np.sum(fn().value * projection))

    for p in params:
        p.zero_grad()
    backpropagate(out, projection.astype(out.value.dtype))
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, grad in zip(params, analytic):
        size = p.value.size
        coords = rng.choice(size, size=min(n_coords, size), replace=False)
        for flat in coords:
            index = np.unravel_index(flat, p.value.shape)
            original = p.value[index]
            p.value[index] = original + step
            upper = objective()
            p.value[index] = original - step
            lower = objective()
            p.value[index] = original
            numeric = (upper - lower) / (2 * step)
            error = abs(grad[index] - numeric) / max(abs(grad[index]), abs(numeric), atol)
            worst = max(worst, float(error))
    return worst
