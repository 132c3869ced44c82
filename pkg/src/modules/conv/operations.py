"""
Convolution, pooling, upsampling and activations over role-tagged tensors.

These wrap the array engine in `src.modules.conv.functional`: kernel axes are bound to tensor axes by role, unbound
axes are carried through (slice-by-slice application), and an optional channel axis holds input channels.
"""

__all__ = [
    "KernelSpec",
    "ConvOptions",
    "conv2d",
    "conv3d",
    "conv4d",
    "grouped_conv4d_layer",
    "maxpool",
    "upsample2d",
    "activation",
]

from collections.abc import Mapping, Sequence
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict

from src.exceptions import ConfigurationError, ShapeError
from src.modules.conv import functional as F
from src.modules.tensor.tensor import AxisRole, Tensor, parse_roles

DEFAULT_AXIS_MAPS: dict[int, tuple[AxisRole, ...]] = {
    2: (AxisRole.WIDTH, AxisRole.HEIGHT),
    3: (AxisRole.WIDTH, AxisRole.HEIGHT, AxisRole.DEPTH),
    4: (AxisRole.WIDTH, AxisRole.HEIGHT, AxisRole.DEPTH, AxisRole.TIME),
}
"Kernel axis -> input axis binding when ConvOptions.axis_map is not given"

TEMPORAL_AXIS_MAP: tuple[AxisRole, ...] = (AxisRole.WIDTH, AxisRole.HEIGHT, AxisRole.TIME)
"Binding of a 2D+time kernel H(w, h, p)"


class KernelSpec:
    """
    Convolution kernel of a given rank.

    `weights` is either (*K) for a single-channel kernel or (*K, C_in, C_out).
    """

    weights: np.ndarray
    rank: int

    __slots__ = ("weights", "rank")

    def __init__(self, weights: ArrayLike | Tensor, rank: int | None = None):
        array = weights.data if isinstance(weights, Tensor) else np.asarray(weights)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        rank = array.ndim if rank is None else rank
        if array.ndim not in (rank, rank + 2):
            raise ShapeError(f"Rank-{rank} kernel cannot have weights of shape {array.shape}")
        if any(k < 1 for k in array.shape[:rank]):
            raise ShapeError(f"Kernel extents must be >= 1, got {array.shape[:rank]}")
        self.weights = array
        self.rank = rank

    @property
    def extents(self) -> tuple[int, ...]:
        return self.weights.shape[: self.rank]

    @property
    def half_widths(self) -> tuple[int, ...]:
        return F.half_widths(self.extents)

    @property
    def multichannel(self) -> bool:
        return self.weights.ndim == self.rank + 2

    def sub_kernel(self, axis: int, k: int) -> "KernelSpec":
        """
        The rank-1-lower kernel H(..., k, ...) obtained by fixing one kernel axis.
        """
        return KernelSpec(np.take(self.weights, k, axis=axis), self.rank - 1)


class ConvOptions(BaseModel):
    model_config = ConfigDict(frozen=True)

    padding: Literal["valid", "same"] = "valid"
    "Valid: no padding. Same: zero-fill by the kernel half-widths (odd kernels only)"
    axis_map: tuple[AxisRole, ...] | None = None
    "Input axis role bound to each kernel axis. None = width, height, depth, time in kernel order"

    @classmethod
    def temporal(cls, padding: Literal["valid", "same"] = "valid") -> "ConvOptions":
        return cls(padding=padding, axis_map=TEMPORAL_AXIS_MAP)


def _resolve_axis_map(kernel: KernelSpec, opts: ConvOptions) -> tuple[AxisRole, ...]:
    axis_map = opts.axis_map if opts.axis_map is not None else DEFAULT_AXIS_MAPS.get(kernel.rank)
    if axis_map is None:
        raise ConfigurationError(f"No default axis binding for a rank-{kernel.rank} kernel")
    axis_map = parse_roles(axis_map)
    if len(axis_map) != kernel.rank:
        raise ConfigurationError(f"axis_map {axis_map} does not match a rank-{kernel.rank} kernel")
    if len(set(axis_map)) != len(axis_map):
        raise ConfigurationError(f"axis_map {axis_map} binds two kernel axes to the same input axis")
    if AxisRole.CHANNEL in axis_map:
        raise ConfigurationError("Kernel axes cannot bind to the channel axis")
    return axis_map


def _padding(kernel: KernelSpec, opts: ConvOptions) -> tuple[int, ...]:
    if opts.padding == "valid":
        return (0,) * kernel.rank
    if any(k % 2 == 0 for k in kernel.extents):
        raise ConfigurationError(f"Same padding needs odd kernel extents, got {kernel.extents}")
    return kernel.half_widths


def _with_batch_and_channel(t: Tensor) -> tuple[np.ndarray, tuple[AxisRole, ...]]:
    """
    (1, *spatial, C) view of a tensor plus the roles of the spatial axes.
    """
    if t.has(AxisRole.CHANNEL):
        return t.data[None], t.axis_roles[:-1]
    return t.data[None, ..., None], t.axis_roles


def _from_batch_and_channel(out: np.ndarray, roles: tuple[AxisRole, ...], keep_channel: bool) -> Tensor:
    if keep_channel:
        return Tensor(out[0], (*roles, AxisRole.CHANNEL))
    return Tensor(out[0, ..., 0], roles)


def _convolve(
    input: Tensor,
    kernel: KernelSpec,
    opts: ConvOptions,
    input_ranks: Sequence[int],
    engine=F.conv_forward,
) -> Tensor:
    spatial_rank = input.rank - int(input.has(AxisRole.CHANNEL))
    if spatial_rank not in input_ranks:
        raise ShapeError(f"Rank-{kernel.rank} convolution does not accept a rank-{spatial_rank} input")
    axis_map = _resolve_axis_map(kernel, opts)
    padding = _padding(kernel, opts)

    x, roles = _with_batch_and_channel(input)
    missing = [role for role in axis_map if role not in roles]
    if missing:
        raise ConfigurationError(f"Input with roles {roles} has no {missing[0]} axis to bind")
    axes = tuple(1 + roles.index(role) for role in axis_map)

    dtype = np.result_type(input.dtype, kernel.weights.dtype)
    x = x.astype(dtype, copy=False)
    w = kernel.weights.astype(dtype, copy=False)
    if kernel.multichannel:
        out, _ = engine(x, w, axes, padding)
        return _from_batch_and_channel(out, roles, keep_channel=True)

    # single-channel kernel: every input channel is convolved independently
    channels = x.shape[-1]
    x = np.moveaxis(x, -1, 0)[..., None].reshape(channels, *x.shape[1:-1], 1)
    out, _ = engine(x, w[..., None, None], axes, padding)
    out = np.moveaxis(out[..., 0], 0, -1)[None]
    return _from_batch_and_channel(out, roles, keep_channel=input.has(AxisRole.CHANNEL))


def conv2d(input: Tensor, kernel: KernelSpec, opts: ConvOptions = ConvOptions()) -> Tensor:
    if kernel.rank != 2:
        raise ShapeError(f"conv2d needs a rank-2 kernel, got rank {kernel.rank}")
    return _convolve(input, kernel, opts, input_ranks=(2, 3))


def conv3d(input: Tensor, kernel: KernelSpec, opts: ConvOptions = ConvOptions()) -> Tensor:
    """
    Spatial kernels H(w, h, d) bind to depth; pass `ConvOptions.temporal()` to bind H(w, h, p) to time instead.
    """
    if kernel.rank != 3:
        raise ShapeError(f"conv3d needs a rank-3 kernel, got rank {kernel.rank}")
    return _convolve(input, kernel, opts, input_ranks=(3, 4))


def conv4d(
    input: Tensor,
    kernel: KernelSpec,
    mode: Literal["direct", "decomposed"] = "decomposed",
    opts: ConvOptions = ConvOptions(),
) -> Tensor:
    if kernel.rank != 4:
        raise ShapeError(f"conv4d needs a rank-4 kernel, got rank {kernel.rank}")
    match mode:
        case "direct":
            engine = F.conv_forward
        case "decomposed":
            engine = F.conv4d_decomposed_forward
        case _:
            raise ConfigurationError(f"Unknown 4D convolution mode {mode!r}")
    return _convolve(input, kernel, opts, input_ranks=(4,), engine=engine)


def grouped_conv4d_layer(
    input: Tensor,
    weights: Sequence[KernelSpec],
    opts: ConvOptions = ConvOptions(),
    engine: Literal["decomposed", "direct"] = "decomposed",
) -> Tensor:
    """
    Grouped 4D layer over an (X, Y, 3, T[, C]) input.

    `weights` holds the 2D+time kernel of the groups centered on slices i-1, i, i+1. A group convolves every legal
    neighbor slice with its kernel and sums the results; the three group outputs are stacked along depth.
    """
    if len(weights) != 3:
        raise ConfigurationError(f"Expected one kernel per group (3), got {len(weights)}")
    if input.axis_roles[:4] != DEFAULT_AXIS_MAPS[4] or input.extent(AxisRole.DEPTH) != 3:
        raise ShapeError(f"Grouped 4D layer needs an (X, Y, 3, T) input, got {input!r}")
    if any(kernel.rank != 3 for kernel in weights):
        raise ShapeError("Group kernels must be rank-3 (2D+time)")
    if len({kernel.weights.shape for kernel in weights}) != 1:
        raise ShapeError("Group kernels must share one shape")

    padding = _padding(weights[0], opts)
    x, roles = _with_batch_and_channel(input)
    w = np.stack([kernel.weights for kernel in weights])
    dtype = np.result_type(x.dtype, w.dtype)
    x, w = x.astype(dtype, copy=False), w.astype(dtype, copy=False)

    if weights[0].multichannel:
        out, _ = F.grouped_conv4d_forward(x, w, padding, sharing="group", engine=engine)
        return _from_batch_and_channel(out, roles, keep_channel=True)
    channels = x.shape[-1]
    x = np.moveaxis(x, -1, 0)[..., None].reshape(channels, *x.shape[1:-1], 1)
    out, _ = F.grouped_conv4d_forward(x, w[..., None, None], padding, sharing="group", engine=engine)
    out = np.moveaxis(out[..., 0], 0, -1)[None]
    return _from_batch_and_channel(out, roles, keep_channel=input.has(AxisRole.CHANNEL))


def maxpool(input: Tensor, pool_sizes: Sequence[int] | Mapping[AxisRole | str, int]) -> Tensor:
    if isinstance(pool_sizes, Mapping):
        sizes = [1] * input.rank
        for role, size in pool_sizes.items():
            sizes[input.axis(role)] = size
    else:
        sizes = list(pool_sizes)
    if len(sizes) != input.rank:
        raise ShapeError(f"Expected {input.rank} pool sizes, got {len(sizes)}")
    for role, extent, size in zip(input.axis_roles, input.dims, sizes):
        if size < 1 or extent % size:
            raise ShapeError(f"Axis {role} with extent {extent} is not divisible by pool size {size}")
    out, _ = F.maxpool_forward(input.data[None, ..., None], sizes)
    return Tensor(out[0, ..., 0], input.axis_roles)


def upsample2d(input: Tensor, factor: int = 2) -> Tensor:
    axes = (input.axis(AxisRole.WIDTH), input.axis(AxisRole.HEIGHT))
    return Tensor(F.upsample_forward(input.data, factor, axes), input.axis_roles)


def activation(
    input: Tensor,
    kind: Literal["leaky_relu", "softmax", "sigmoid"],
    alpha: float = 1 / 3,
    axis: AxisRole | str = AxisRole.CHANNEL,
) -> Tensor:
    match kind:
        case "leaky_relu":
            return input.with_data(F.leaky_relu_forward(input.data, alpha))
        case "sigmoid":
            return input.with_data(F.sigmoid_forward(input.data))
        case "softmax":
            return input.with_data(F.softmax_forward(input.data, axis=input.axis(axis)))
        case _:
            raise ConfigurationError(f"Unknown activation {kind!r}")
