"""
Differentiable ops on `Node`s. Arrays are (N, *S, C) as in `src.modules.conv.functional`.
"""

__all__ = [
    "conv",
    "grouped_conv4d",
    "maxpool",
    "upsample",
    "leaky_relu",
    "sigmoid",
    "softmax",
    "add",
    "mul",
    "concat",
    "reshape",
    "take",
    "dropout",
    "segmentation_loss",
]

from collections.abc import Sequence

import numpy as np

from src.config_schema import LossConfig
from src.exceptions import ShapeError
from src.modules.autodiff.graph import Node
from src.modules.conv import functional as F
from src.modules.metrics.losses import loss_value_and_grad


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def conv(x: Node, w: Node, b: Node | None, axes: Sequence[int], padding: Sequence[int]) -> Node:
    out, cache = F.conv_forward(x.value, w.value, axes, padding)
    if b is not None:
        out = out + b.value

    def backward(g: np.ndarray):
        dx, dw = F.conv_backward(g, cache)
        if b is None:
            return dx, dw
        return dx, dw, g.reshape(-1, g.shape[-1]).sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return Node(out, parents, backward)


def grouped_conv4d(
    x: Node, w: Node, b: Node | None, padding: Sequence[int], sharing: str = "group", engine: str = "decomposed"
) -> Node:
    out, cache = F.grouped_conv4d_forward(x.value, w.value, padding, sharing, engine)
    if b is not None:
        out = out + b.value

    def backward(g: np.ndarray):
        dx, dw = F.grouped_conv4d_backward(g, cache)
        if b is None:
            return dx, dw
        return dx, dw, g.reshape(-1, g.shape[-1]).sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return Node(out, parents, backward)


def maxpool(x: Node, pool: Sequence[int]) -> Node:
    out, cache = F.maxpool_forward(x.value, pool)
    return Node(out, (x,), lambda g: (F.maxpool_backward(g, cache),))


def upsample(x: Node, factor: int, axes: Sequence[int]) -> Node:
    out = F.upsample_forward(x.value, factor, axes)
    return Node(out, (x,), lambda g: (F.upsample_backward(g, factor, axes),))


def leaky_relu(x: Node, alpha: float) -> Node:
    out = F.leaky_relu_forward(x.value, alpha)
    return Node(out, (x,), lambda g: (F.leaky_relu_backward(g, x.value, alpha),))


def sigmoid(x: Node) -> Node:
    out = F.sigmoid_forward(x.value)
    return Node(out, (x,), lambda g: (F.sigmoid_backward(g, out),))


def softmax(x: Node, axis: int = -1) -> Node:
    out = F.softmax_forward(x.value, axis)
    return Node(out, (x,), lambda g: (F.softmax_backward(g, out, axis),))


def add(a: Node, b: Node) -> Node:
    out = a.value + b.value
    return Node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a: Node, b: Node) -> Node:
    out = a.value * b.value
    return Node(
        out, (a, b), lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape))
    )


def concat(nodes: Sequence[Node], axis: int = -1) -> Node:
    out = np.concatenate([n.value for n in nodes], axis=axis)
    boundaries = np.cumsum([n.shape[axis] for n in nodes])[:-1]
    return Node(out, nodes, lambda g: tuple(np.split(g, boundaries, axis=axis)))


def reshape(x: Node, shape: Sequence[int]) -> Node:
    return Node(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def take(x: Node, index: int, axis: int) -> Node:
    """
    Select one position along `axis`, dropping the axis.
    """
    out = np.take(x.value, index, axis=axis)

    def backward(g: np.ndarray):
        dx = np.zeros_like(x.value)
        selector = [slice(None)] * x.value.ndim
        selector[axis] = index
        dx[tuple(selector)] = g
        return (dx,)

    return Node(out, (x,), backward)


def dropout(x: Node, rate: float, rng: np.random.Generator) -> Node:
    """
    Inverted dropout: each element is zeroed with probability `rate`, survivors scaled by 1 / (1 - rate).
    """
    keep = (rng.random(x.shape) >= rate).astype(x.value.dtype) / (1 - rate)
    return Node(x.value * keep, (x,), lambda g: (g * keep,))


def segmentation_loss(
    probs: Node,
    targets: np.ndarray,
    masks: np.ndarray,
    cfg: LossConfig,
    weights: np.ndarray | None = None,
    multipliers: np.ndarray | None = None,
) -> Node:
    """
    Batch loss: mean over samples of (multiplier x per-sample loss on its evaluable pixels).

    `probs` and `targets` are (N, X, Y, 3); `masks` is (N, X, Y); `weights` is (N, X, Y, 3).
    """
    if probs.shape != targets.shape or probs.shape[:3] != masks.shape:
        raise ShapeError(f"Probabilities {probs.shape}, targets {targets.shape}, masks {masks.shape} disagree")
    n = probs.shape[0]
    multipliers = np.ones(n) if multipliers is None else np.asarray(multipliers, dtype=np.float64)

    total = 0.0
    grad = np.zeros(probs.shape, dtype=np.float64)
    for i in range(n):
        mask = masks[i]
        x = probs.value[i][mask].astype(np.float64)
        y = targets[i][mask].astype(np.float64)
        w = weights[i][mask] if weights is not None else None
        value, g = loss_value_and_grad(cfg, x, y, w)
        total += multipliers[i] * value
        grad[i][mask] = multipliers[i] * g / n

    out = np.asarray(total / n, dtype=probs.value.dtype)
    return Node(out, (probs,), lambda g: ((grad * g).astype(probs.value.dtype),))
