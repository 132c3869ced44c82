__all__ = ["ParamStore", "adam_step", "lr_at_epoch", "BETA1", "BETA2", "EPSILON"]

import math
from collections.abc import Iterable, Mapping

import numpy as np

from src.config_schema import TrainConfig
from src.exceptions import ConfigurationError, ShapeError
from src.modules.autodiff.graph import Parameter

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


class ParamStore:
    """
    Named parameters with Adam moment accumulators.
    """

    params: dict[str, Parameter]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int

    def __init__(self, params: Mapping[str, Parameter] | Iterable[Parameter]):
        if isinstance(params, Mapping):
            self.params = dict(params)
        else:
            self.params = {p.name: p for p in params}
        self.m = {name: np.zeros_like(p.value) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.value) for name, p in self.params.items()}
        self.step = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name].value

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def grads(self) -> dict[str, np.ndarray]:
        return {name: p.grad for name, p in self.params.items()}


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    if epoch < 0:
        raise ConfigurationError(f"Epoch must be >= 0, got {epoch}")
    return cfg.learning_rate * cfg.decay_factor ** (epoch // cfg.decay_every_epochs)


def adam_step(
    store: ParamStore, grads: Mapping[str, np.ndarray], cfg: TrainConfig, lr: float | None = None
) -> ParamStore:
    """
    One Adam update. Kernel gradients first receive the L1 and L2 penalty terms; after the update every kernel and
    bias tensor is projected back onto the ball of radius `cfg.max_norm`.
    """
    lr = cfg.learning_rate if lr is None else lr
    for name in grads:
        if name not in store.params:
            raise ShapeError(f"Gradient for unknown parameter {name!r}")

    store.step += 1
    t = store.step
    for name, param in store.params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.value.shape:
            raise ShapeError(f"Gradient of {name!r} has shape {grad.shape}, parameter has {param.value.shape}")
        w = param.value
        if param.is_kernel:
            grad = grad + cfg.l1_weight * np.sign(w) + 2 * cfg.l2_weight * w

        store.m[name] = BETA1 * store.m[name] + (1 - BETA1) * grad
        store.v[name] = BETA2 * store.v[name] + (1 - BETA2) * grad**2
        m_hat = store.m[name] / (1 - BETA1**t)
        v_hat = store.v[name] / (1 - BETA2**t)
        w = w - lr * m_hat / (np.sqrt(v_hat) + EPSILON)

        if math.isfinite(cfg.max_norm):
            norm = float(np.linalg.norm(w))
            if norm > cfg.max_norm:
                w = w * (cfg.max_norm / norm)
        param.value = w.astype(param.value.dtype, copy=False)
    return store
