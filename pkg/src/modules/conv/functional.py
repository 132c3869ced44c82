"""
Array-level convolution engine.

Arrays are laid out (N, *S, C): a batch axis, the spatial and temporal axes, then channels. Kernels are
(*K, C_in, C_out). Convolution follows the flipped-kernel definition

    out(x) = sum_i H(i) * I(x + h - i),    h = floor((k - 1) / 2)

evaluated through im2col: one strided window view, one matrix product. Every forward routine returns the result
and a cache that the matching backward routine consumes to produce the adjoint.
"""

__all__ = [
    "half_widths",
    "conv_forward",
    "conv_backward",
    "conv4d_decomposed_forward",
    "conv4d_decomposed_backward",
    "grouped_conv4d_forward",
    "grouped_conv4d_backward",
    "maxpool_forward",
    "maxpool_backward",
    "upsample_forward",
    "upsample_backward",
    "leaky_relu_forward",
    "leaky_relu_backward",
    "softmax_forward",
    "softmax_backward",
    "sigmoid_forward",
    "sigmoid_backward",
]

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from src.exceptions import ConfigurationError, ShapeError

LEGAL_NEIGHBORS: dict[int, tuple[int, ...]] = {0: (0, 1), 1: (0, 1, 2), 2: (1, 2)}
"Input slices that contribute to each group of the grouped 4D layer (term truncation at the edges)"

DEPTH_AXIS = 3
"Depth axis of a (N, X, Y, Z, T, C) array"


def half_widths(extents: Sequence[int]) -> tuple[int, ...]:
    return tuple((k - 1) // 2 for k in extents)


def _flip(w: np.ndarray, rank: int) -> np.ndarray:
    return w[(slice(None, None, -1),) * rank]


@dataclass(slots=True)
class ConvCache:
    cols: np.ndarray
    wmat: np.ndarray
    perm: tuple[int, ...]
    batch: int
    free_shape: tuple[int, ...]
    bound_shape: tuple[int, ...]
    padded_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    kernel: tuple[int, ...]
    padding: tuple[int, ...]


def conv_forward(
    x: np.ndarray, w: np.ndarray, axes: Sequence[int], padding: Sequence[int] | None = None
) -> tuple[np.ndarray, ConvCache]:
    """
    Convolve `x` (N, *S, C_in) with `w` (*K, C_in, C_out) over the axes of S listed in `axes` (kernel order).

    Axes of S that are not bound to a kernel axis are carried through untouched. `padding` is a zero-fill amount
    per bound axis, applied on both sides.
    """
    rank = len(axes)
    n_spatial = x.ndim - 2
    if w.ndim != rank + 2:
        raise ShapeError(f"Kernel of shape {w.shape} does not match {rank} bound axes")
    if len(set(axes)) != rank or any(not 1 <= a <= n_spatial for a in axes):
        raise ConfigurationError(f"Invalid axis binding {tuple(axes)} for {n_spatial} spatial axes")
    kernel = w.shape[:rank]
    c_in, c_out = w.shape[rank], w.shape[rank + 1]
    if x.shape[-1] != c_in:
        raise ShapeError(f"Input has {x.shape[-1]} channels, kernel expects {c_in}")
    padding = tuple(padding) if padding is not None else (0,) * rank

    free = tuple(a for a in range(1, n_spatial + 1) if a not in axes)
    perm = (0, *free, *axes, x.ndim - 1)
    xt = x.transpose(perm)
    free_shape = xt.shape[1 : 1 + len(free)]
    bound_shape = xt.shape[1 + len(free) : -1]
    xb = xt.reshape((-1, *bound_shape, c_in))
    if any(padding):
        xb = np.pad(xb, [(0, 0), *((p, p) for p in padding), (0, 0)])
    padded_shape = xb.shape[1:-1]
    out_shape = tuple(s - k + 1 for s, k in zip(padded_shape, kernel))
    if any(o < 1 for o in out_shape):
        raise ShapeError(f"Kernel {kernel} is larger than the padded input {padded_shape}")

    batch = xb.shape[0]
    windows = sliding_window_view(xb, kernel, axis=tuple(range(1, rank + 1)))
    cols = windows.reshape(batch * math.prod(out_shape), c_in * math.prod(kernel))
    wmat = _flip(w, rank).transpose(rank, *range(rank), rank + 1).reshape(c_in * math.prod(kernel), c_out)

    out = (cols @ wmat).reshape((x.shape[0], *free_shape, *out_shape, c_out))
    out = out.transpose(np.argsort(perm))
    cache = ConvCache(cols, wmat, perm, batch, free_shape, bound_shape, padded_shape, out_shape, kernel, padding)
    return out, cache


def conv_backward(dout: np.ndarray, cache: ConvCache) -> tuple[np.ndarray, np.ndarray]:
    rank = len(cache.kernel)
    c_in = cache.cols.shape[1] // math.prod(cache.kernel)
    c_out = cache.wmat.shape[1]

    dmat = dout.transpose(cache.perm).reshape(-1, c_out)
    dw = (cache.cols.T @ dmat).reshape(c_in, *cache.kernel, c_out)
    dw = _flip(dw.transpose(*range(1, rank + 1), 0, rank + 1), rank)

    dcols = (dmat @ cache.wmat.T).reshape(cache.batch, *cache.out_shape, c_in, *cache.kernel)
    dxp = np.zeros((cache.batch, *cache.padded_shape, c_in), dtype=dcols.dtype)
    for tap in np.ndindex(*cache.kernel):
        window = tuple(slice(t, t + o) for t, o in zip(tap, cache.out_shape))
        dxp[(slice(None), *window)] += dcols[(Ellipsis, *tap)]
    interior = tuple(slice(p, s - p) for p, s in zip(cache.padding, cache.padded_shape))
    dxb = dxp[(slice(None), *interior)]

    n = dout.shape[0]
    dx = dxb.reshape((n, *cache.free_shape, *cache.bound_shape, c_in)).transpose(np.argsort(cache.perm))
    return dx, dw


def _pad_axis(x: np.ndarray, axis: int, amount: int) -> np.ndarray:
    if not amount:
        return x
    widths = [(0, 0)] * x.ndim
    widths[axis] = (amount, amount)
    return np.pad(x, widths)


def _take(x: np.ndarray, axis: int, start: int, stop: int) -> np.ndarray:
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    return x[tuple(index)]


@dataclass(slots=True)
class Decomposed4dCache:
    caches: list[ConvCache]
    depth_axis: int
    depth_padding: int
    padded_depth: int
    out_depth: int


def conv4d_decomposed_forward(
    x: np.ndarray, w: np.ndarray, axes: Sequence[int], padding: Sequence[int] | None = None
) -> tuple[np.ndarray, Decomposed4dCache]:
    """
    4D convolution as a sum of 3D convolutions over the depth taps of the kernel.

    `axes` binds the kernel axes (w, h, d, p) to input axes; each sub-kernel H(:, :, k, :) is a 2D+time kernel
    applied to the depth-shifted input z + d~ - k.
    """
    if len(axes) != 4 or w.ndim != 6:
        raise ShapeError(f"Decomposed 4D convolution needs a rank-4 kernel, got shape {w.shape}")
    padding = tuple(padding) if padding is not None else (0, 0, 0, 0)
    depth_axis, d = axes[2], w.shape[2]
    xp = _pad_axis(x, depth_axis, padding[2])
    out_depth = xp.shape[depth_axis] - d + 1
    if out_depth < 1:
        raise ShapeError(f"Kernel depth {d} is larger than the padded input depth {xp.shape[depth_axis]}")

    sub_axes = (axes[0], axes[1], axes[3])
    sub_padding = (padding[0], padding[1], padding[3])
    out, caches = None, []
    for k in range(d):
        start = d - 1 - k
        y, cache = conv_forward(_take(xp, depth_axis, start, start + out_depth), w[:, :, k], sub_axes, sub_padding)
        out = y if out is None else out + y
        caches.append(cache)
    return out, Decomposed4dCache(caches, depth_axis, padding[2], xp.shape[depth_axis], out_depth)


def conv4d_decomposed_backward(dout: np.ndarray, cache: Decomposed4dCache) -> tuple[np.ndarray, np.ndarray]:
    d = len(cache.caches)
    dw_parts = []
    dxp = None
    for k, sub_cache in enumerate(cache.caches):
        dxs, dwk = conv_backward(dout, sub_cache)
        if dxp is None:
            shape = list(dxs.shape)
            shape[cache.depth_axis] = cache.padded_depth
            dxp = np.zeros(shape, dtype=dxs.dtype)
        start = d - 1 - k
        index = [slice(None)] * dxp.ndim
        index[cache.depth_axis] = slice(start, start + cache.out_depth)
        dxp[tuple(index)] += dxs
        dw_parts.append(dwk)
    dx = _take(dxp, cache.depth_axis, cache.depth_padding, cache.padded_depth - cache.depth_padding)
    return dx, np.stack(dw_parts, axis=2)


@dataclass(slots=True)
class GroupedCache:
    sharing: str
    engine: str
    terms: list[tuple[int, int, int, object]]
    x_shape: tuple[int, ...]


def _group_terms(sharing: str) -> list[tuple[int, int, int]]:
    """
    (group j, kernel offset k, input slice m) triples; slice m = j + 1 - k must be a legal neighbor.
    """
    if sharing not in ("group", "offset"):
        raise ConfigurationError(f"Unknown weight sharing {sharing!r}")
    return [(j, k, j + 1 - k) for j in range(3) for k in range(3) if j + 1 - k in LEGAL_NEIGHBORS[j]]


def _group_kernel(w: np.ndarray, sharing: str, j: int, k: int) -> np.ndarray:
    return w[j] if sharing == "group" else w[j, k]


def grouped_conv4d_forward(
    x: np.ndarray,
    w: np.ndarray,
    padding: Sequence[int] = (1, 1, 1),
    sharing: Literal["group", "offset"] = "group",
    engine: Literal["decomposed", "direct"] = "decomposed",
) -> tuple[np.ndarray, GroupedCache]:
    """
    Grouped 4D layer over x (N, X, Y, 3, T, C_in).

    Group G_j convolves every legal neighbor slice with 2D+time kernels (over X, Y, T), sums the results, and the
    three group outputs are stacked back along depth. `w` is (3, kw, kh, kp, C_in, C_out) when each group shares one
    kernel, or (3, 3, kw, kh, kp, C_in, C_out) when every neighbor offset has its own kernel. `padding` is the
    zero-fill over (X, Y, T).
    """
    if x.ndim != 6 or x.shape[DEPTH_AXIS] != 3:
        raise ShapeError(f"Grouped 4D layer expects (N, X, Y, 3, T, C) input, got {x.shape}")
    expected = 6 if sharing == "group" else 7
    if w.ndim != expected:
        raise ShapeError(f"Weights of shape {w.shape} do not match {sharing!r} sharing")
    terms = _group_terms(sharing)
    slice_axes = (1, 2, 3)

    outputs: list[np.ndarray | None] = [None, None, None]
    cached: list[tuple[int, int, int, object]] = []
    if engine == "decomposed" and sharing == "group":
        # one kernel per group: by linearity the group output is the convolution of the summed neighbors
        for j in range(3):
            summed = sum(x[:, :, :, m] for m in LEGAL_NEIGHBORS[j])
            outputs[j], cache = conv_forward(summed, w[j], slice_axes, padding)
            cached.append((j, -1, -1, cache))
    elif engine == "decomposed":
        for j, k, m in terms:
            y, cache = conv_forward(x[:, :, :, m], _group_kernel(w, sharing, j, k), slice_axes, padding)
            outputs[j] = y if outputs[j] is None else outputs[j] + y
            cached.append((j, k, m, cache))
    elif engine == "direct":
        xp = _pad_axis(x, DEPTH_AXIS, 1)
        for j in range(3):
            kernel = np.stack([_group_kernel(w, sharing, j, k) for k in range(3)], axis=2)
            y, cache = conv_forward(xp, kernel, (1, 2, 3, 4), (padding[0], padding[1], 0, padding[2]))
            outputs[j] = y[:, :, :, j]
            cached.append((j, -1, -1, cache))
    else:
        raise ConfigurationError(f"Unknown 4D convolution engine {engine!r}")

    return np.stack(outputs, axis=DEPTH_AXIS), GroupedCache(sharing, engine, cached, x.shape)


def grouped_conv4d_backward(dout: np.ndarray, cache: GroupedCache) -> tuple[np.ndarray, np.ndarray]:
    dx = np.zeros(cache.x_shape, dtype=dout.dtype)
    dw_terms: dict[tuple[int, int], np.ndarray] = {}

    for j, k, m, sub_cache in cache.terms:
        dy = dout[:, :, :, j]
        if cache.engine == "direct":
            full = np.zeros((*dy.shape[:3], 3, *dy.shape[3:]), dtype=dout.dtype)
            full[:, :, :, j] = dy
            dxp, dkernel = conv_backward(full, sub_cache)
            dx += dxp[:, :, :, 1:4]
            for offset in range(3):
                key = (j, 0) if cache.sharing == "group" else (j, offset)
                dw_terms[key] = dw_terms.get(key, 0) + dkernel[:, :, offset]
        elif k < 0:
            dsum, dwj = conv_backward(dy, sub_cache)
            for neighbor in LEGAL_NEIGHBORS[j]:
                dx[:, :, :, neighbor] += dsum
            dw_terms[(j, 0)] = dwj
        else:
            dxm, dwjk = conv_backward(dy, sub_cache)
            dx[:, :, :, m] += dxm
            key = (j, 0) if cache.sharing == "group" else (j, k)
            dw_terms[key] = dw_terms.get(key, 0) + dwjk

    if cache.sharing == "group":
        dw = np.stack([dw_terms[(j, 0)] for j in range(3)])
    else:
        sample = next(iter(dw_terms.values()))
        dw = np.stack(
            [np.stack([dw_terms.get((j, k), np.zeros_like(sample)) for k in range(3)]) for j in range(3)]
        )
    return dx, dw


@dataclass(slots=True)
class PoolCache:
    x_shape: tuple[int, ...]
    window_shape: tuple[int, ...]
    moved_shape: tuple[int, ...]
    argmax: np.ndarray


def maxpool_forward(x: np.ndarray, pool: Sequence[int]) -> tuple[np.ndarray, PoolCache]:
    """
    Non-overlapping max pooling of x (N, *S, C) with one pool size per axis of S.
    """
    n_spatial = x.ndim - 2
    if len(pool) != n_spatial:
        raise ShapeError(f"Expected {n_spatial} pool sizes, got {len(pool)}")
    for axis, (s, p) in enumerate(zip(x.shape[1:-1], pool)):
        if p < 1 or s % p:
            raise ShapeError(f"Axis {axis} with extent {s} is not divisible by pool size {p}")

    split_shape = [x.shape[0]]
    for s, p in zip(x.shape[1:-1], pool):
        split_shape += [s // p, p]
    split_shape.append(x.shape[-1])
    window_axes = tuple(2 + 2 * i for i in range(n_spatial))
    moved = np.moveaxis(x.reshape(split_shape), window_axes, tuple(range(-n_spatial, 0)))
    flat = moved.reshape(*moved.shape[:-n_spatial], -1)
    # argmax returns the first maximum: ties go to the lowest linear index in the window
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    return out, PoolCache(x.shape, tuple(pool), moved.shape, argmax)


def maxpool_backward(dout: np.ndarray, cache: PoolCache) -> np.ndarray:
    n_spatial = len(cache.window_shape)
    dflat = np.zeros((*dout.shape, math.prod(cache.window_shape)), dtype=dout.dtype)
    np.put_along_axis(dflat, cache.argmax[..., None], dout[..., None], axis=-1)
    moved = dflat.reshape(cache.moved_shape)
    window_axes = tuple(2 + 2 * i for i in range(n_spatial))
    split = np.moveaxis(moved, tuple(range(-n_spatial, 0)), window_axes)
    return split.reshape(cache.x_shape)


def upsample_forward(x: np.ndarray, factor: int, axes: Sequence[int]) -> np.ndarray:
    """
    Nearest-neighbor upsampling of the listed axes.
    """
    if factor < 1:
        raise ConfigurationError(f"Upsampling factor must be >= 1, got {factor}")
    for axis in axes:
        x = np.repeat(x, factor, axis=axis)
    return x


def upsample_backward(dout: np.ndarray, factor: int, axes: Sequence[int]) -> np.ndarray:
    for axis in sorted(axes, reverse=True):
        shape = list(dout.shape)
        shape[axis : axis + 1] = [shape[axis] // factor, factor]
        dout = dout.reshape(shape).sum(axis=axis + 1)
    return dout


def leaky_relu_forward(x: np.ndarray, alpha: float) -> np.ndarray:
    return np.where(x >= 0, x, alpha * x)


def leaky_relu_backward(dout: np.ndarray, x: np.ndarray, alpha: float) -> np.ndarray:
    return dout * np.where(x >= 0, 1.0, alpha).astype(dout.dtype)


def softmax_forward(x: np.ndarray, axis: int = -1) -> np.ndarray:
    if x.shape[axis] == 0:
        raise ShapeError("Softmax over an empty axis")
    return special.softmax(x, axis=axis)


def softmax_backward(dout: np.ndarray, s: np.ndarray, axis: int = -1) -> np.ndarray:
    return s * (dout - np.sum(dout * s, axis=axis, keepdims=True))


def sigmoid_forward(x: np.ndarray) -> np.ndarray:
    return special.expit(x)


def sigmoid_backward(dout: np.ndarray, s: np.ndarray) -> np.ndarray:
    return dout * s * (1 - s)
