"""
Layer modules. Activations are (N, *S, C) arrays wrapped in graph nodes; every module builds its part of the graph
in `forward`.
"""

__all__ = ["Module", "Conv", "GroupedConv4d", "ConvBlock", "AttentionGate", "MCDropout", "mc_dropout"]

import math
from collections.abc import Iterator, Mapping, Sequence

import numpy as np

from src.exceptions import ConfigurationError, ShapeError, StateError
from src.modules.autodiff import ops
from src.modules.autodiff.graph import Node, Parameter, backpropagate, constant
from src.modules.tensor.tensor import Tensor


class Module:
    def __init__(self):
        self._last_output: Node | None = None

    def forward(self, x: Node, training: bool = False, rng: np.random.Generator | None = None) -> Node:
        raise NotImplementedError

    def __call__(
        self, x: Node | np.ndarray, training: bool = False, rng: np.random.Generator | None = None
    ) -> Node:
        if not isinstance(x, Node):
            x = constant(np.asarray(x))
        out = self.forward(x, training=training, rng=rng)
        self._last_output = out
        return out

    def _children(self) -> Iterator[tuple[str, "Module | Parameter"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module | Parameter):
                yield name, value
            elif isinstance(value, list | tuple):
                for i, item in enumerate(value):
                    if isinstance(item, Module | Parameter):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        params: dict[str, Parameter] = {}
        seen: set[int] = set()
        for name, child in self._children():
            qualified = f"{prefix}{name}"
            if isinstance(child, Parameter):
                if id(child) not in seen:
                    child.name = qualified
                    params[qualified] = child
                    seen.add(id(child))
                continue
            for sub_name, p in child.named_parameters(f"{qualified}.").items():
                if id(p) not in seen:
                    params[sub_name] = p
                    seen.add(id(p))
        return params

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise ConfigurationError(
                f"State does not match the network: missing {sorted(missing)}, unexpected {sorted(unexpected)}"
            )
        for name, p in params.items():
            p.assign(np.asarray(state[name]))

    def backward(self, grad: np.ndarray | None = None) -> dict[str, np.ndarray]:
        """
        Gradients of every parameter for the gradient `grad` at the output of the last forward pass.
        """
        if self._last_output is None:
            raise StateError("backward() called before any forward pass")
        self.zero_grad()
        backpropagate(self._last_output, grad)
        return {name: p.grad.copy() for name, p in self.named_parameters().items()}


def he_normal(rng: np.random.Generator, shape: Sequence[int], fan_in: int, dtype: str) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)


class Conv(Module):
    """
    Convolution over the array axes `axes`. Padding defaults to the kernel half-widths (same output extents).
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: Sequence[int],
        axes: Sequence[int],
        rng: np.random.Generator,
        padding: Sequence[int] | None = None,
        bias: bool = True,
        dtype: str = "float32",
    ):
        super().__init__()
        if len(kernel) != len(axes):
            raise ConfigurationError(f"Kernel {tuple(kernel)} does not match axes {tuple(axes)}")
        self.axes = tuple(axes)
        self.padding = tuple(padding) if padding is not None else tuple((k - 1) // 2 for k in kernel)
        fan_in = in_channels * math.prod(kernel)
        self.weight = Parameter(he_normal(rng, (*kernel, in_channels, out_channels), fan_in, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype), is_kernel=False) if bias else None

    def forward(self, x: Node, training: bool = False, rng: np.random.Generator | None = None) -> Node:
        return ops.conv(x, self.weight, self.bias, self.axes, self.padding)


class GroupedConv4d(Module):
    """
    Grouped 4D layer over (N, X, Y, 3, T, C) activations: 2D+time kernels per group, summed over legal neighbors.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        sharing: str = "group",
        engine: str = "decomposed",
        dtype: str = "float32",
    ):
        super().__init__()
        self.sharing = sharing
        self.engine = engine
        self.padding = ((kernel_size - 1) // 2,) * 3
        kernel = (kernel_size,) * 3
        groups = (3,) if sharing == "group" else (3, 3)
        shape = (*groups, *kernel, in_channels, out_channels)
        fan_in = 3 * in_channels * math.prod(kernel)
        self.weight = Parameter(he_normal(rng, shape, fan_in, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype), is_kernel=False)

    def forward(self, x: Node, training: bool = False, rng: np.random.Generator | None = None) -> Node:
        return ops.grouped_conv4d(x, self.weight, self.bias, self.padding, self.sharing, self.engine)


class ConvBlock(Module):
    """
    Same-padded convolutions, each followed by a Leaky ReLU.
    """

    def __init__(self, convs: Sequence[Module], leaky_alpha: float):
        super().__init__()
        self.convs = list(convs)
        self.leaky_alpha = leaky_alpha

    def forward(self, x: Node, training: bool = False, rng: np.random.Generator | None = None) -> Node:
        for conv in self.convs:
            x = ops.leaky_relu(conv(x, training, rng), self.leaky_alpha)
        return x


class AttentionGate(Module):
    """
    Additive attention on a skip connection: a = sigmoid(psi(leaky(Wg * g + Wx * x))), output a * x.

    `gating` and `skip` are (N, X, Y, C) with equal spatial extents (the gating signal is upsampled beforehand).
    """

    def __init__(
        self,
        gating_channels: int,
        skip_channels: int,
        inter_channels: int,
        rng: np.random.Generator,
        kernel_size: int = 3,
        leaky_alpha: float = 1 / 3,
        dtype: str = "float32",
    ):
        super().__init__()
        kernel = (kernel_size, kernel_size)
        self.w_g = Conv(gating_channels, inter_channels, kernel, (1, 2), rng, dtype=dtype)
        self.w_x = Conv(skip_channels, inter_channels, kernel, (1, 2), rng, bias=False, dtype=dtype)
        self.psi = Conv(inter_channels, 1, (1, 1), (1, 2), rng, dtype=dtype)
        self.leaky_alpha = leaky_alpha
        self.last_coefficients: np.ndarray | None = None

    def gate(self, gating: Node, skip: Node) -> Node:
        if gating.shape[:3] != skip.shape[:3]:
            raise ShapeError(f"Gating signal {gating.shape} and skip {skip.shape} differ in extents")
        mixed = ops.leaky_relu(ops.add(self.w_g(gating), self.w_x(skip)), self.leaky_alpha)
        coefficients = ops.sigmoid(self.psi(mixed))
        self.last_coefficients = coefficients.value
        out = ops.mul(coefficients, skip)
        self._last_output = out
        return out

    def forward(self, x: Node, training: bool = False, rng: np.random.Generator | None = None) -> Node:
        raise StateError("AttentionGate takes two inputs; call gate(gating, skip)")


def mc_dropout(
    input: Tensor | np.ndarray, rate: float, rng: np.random.Generator, enabled: bool = True
) -> Tensor | np.ndarray:
    if not 0 <= rate < 1:
        raise ConfigurationError(f"Dropout rate must be in [0, 1), got {rate}")
    data = input.data if isinstance(input, Tensor) else np.asarray(input)
    if enabled and rate > 0:
        data = ops.dropout(constant(data), rate, rng).value
    return input.with_data(data) if isinstance(input, Tensor) else data


class MCDropout(Module):
    """
    Dropout that stays active at inference whenever the forward pass is stochastic (Monte Carlo sampling).
    """

    def __init__(self, rate: float):
        super().__init__()
        if not 0 <= rate < 1:
            raise ConfigurationError(f"Dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x: Node, training: bool = False, rng: np.random.Generator | None = None) -> Node:
        if not training or self.rate == 0:
            return x
        if rng is None:
            raise StateError("Active dropout needs a random generator")
        return ops.dropout(x, self.rate, rng)
