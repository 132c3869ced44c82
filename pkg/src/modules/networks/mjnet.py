"""
mJ-Net variants. Both take (N, X, Y, 3, T, 1) windows and return per-pixel class probabilities (N, X, Y, 3).

- `MJNet3DTime`: one 2D+time encoder per input slice, fused and decoded by a 2D U-Net with attention-gated skips.
- `MJNet4D`: grouped 4D blocks collapse time, a 3D block collapses depth, then a 2D U-Net; two Monte Carlo dropout
  layers, no attention.
"""

__all__ = ["MJNet3DTime", "MJNet4D", "UNet2d", "TimeEncoder", "build_network"]

import numpy as np

from src.config_schema import NetworkConfig
from src.exceptions import ShapeError
from src.modules.autodiff import ops
from src.modules.autodiff.graph import Node, constant
from src.modules.networks.layers import AttentionGate, Conv, ConvBlock, GroupedConv4d, MCDropout, Module

PLANE = (1, 2)
"X and Y axes of an (N, X, Y, C) activation"


def _conv_stack(
    in_channels: int, out_channels: int, n: int, kernel: tuple[int, ...], axes: tuple[int, ...], cfg, rng
) -> list[Conv]:
    return [
        Conv(in_channels if i == 0 else out_channels, out_channels, kernel, axes, rng, dtype=cfg.dtype)
        for i in range(n)
    ]


class UNet2d(Module):
    """
    2D encoder-decoder on (N, X, Y, C) features: 2x2 max pooling down, x2 upsampling up, concatenated skips.
    """

    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator, attention: bool):
        super().__init__()
        widths = cfg.channel_widths
        k = (cfg.kernel_size, cfg.kernel_size)
        n = cfg.convs_per_block
        self.down = [
            ConvBlock(_conv_stack(widths[level - 1], widths[level], n, k, PLANE, cfg, rng), cfg.leaky_alpha)
            for level in range(1, len(widths))
        ]
        self.up = [
            ConvBlock(
                _conv_stack(widths[level] + widths[level - 1], widths[level - 1], n, k, PLANE, cfg, rng),
                cfg.leaky_alpha,
            )
            for level in range(len(widths) - 1, 0, -1)
        ]
        self.gates = (
            [
                AttentionGate(
                    widths[level],
                    widths[level - 1],
                    max(widths[level - 1] // 2, 1),
                    rng,
                    cfg.kernel_size,
                    cfg.leaky_alpha,
                    cfg.dtype,
                )
                for level in range(len(widths) - 1, 0, -1)
            ]
            if attention
            else []
        )

    def forward(self, x: Node, training: bool = False, rng: np.random.Generator | None = None) -> Node:
        skips = [x]
        h = x
        for block in self.down:
            h = block(ops.maxpool(h, (2, 2)), training, rng)
            skips.append(h)
        skips.pop()
        for i, block in enumerate(self.up):
            skip = skips.pop()
            gating = ops.upsample(h, 2, PLANE)
            if self.gates:
                skip = self.gates[i].gate(gating, skip)
            h = block(ops.concat([gating, skip], axis=-1), training, rng)
        return h


class TimeEncoder(Module):
    """
    2D+time encoder of one slice: (N, X, Y, T, 1) -> (N, X, Y, C), time pooled away by the schedule.
    """

    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator):
        super().__init__()
        k = (cfg.kernel_size,) * 3
        width = cfg.channel_widths[0]
        self.time_pool_schedule = list(cfg.time_pool_schedule)
        self.blocks = [
            ConvBlock(
                _conv_stack(1 if level == 0 else width, width, cfg.convs_per_block, k, (1, 2, 3), cfg, rng),
                cfg.leaky_alpha,
            )
            for level in range(len(self.time_pool_schedule))
        ]

    def forward(self, x: Node, training: bool = False, rng: np.random.Generator | None = None) -> Node:
        h = x
        for block, pool in zip(self.blocks, self.time_pool_schedule):
            h = ops.maxpool(block(h, training, rng), (1, 1, pool))
        n, width, height, _, channels = h.shape
        return ops.reshape(h, (n, width, height, channels))


class _MJNet(Module):
    config: NetworkConfig

    def _prepare(self, x: Node) -> Node:
        expected = (*self.config.input_extents, 1)
        if x.shape[1:] != expected:
            raise ShapeError(f"Network expects inputs (N, {', '.join(map(str, expected))}), got {x.shape}")
        if x.value.dtype != np.dtype(self.config.dtype) and not x.requires_grad:
            return constant(x.value.astype(self.config.dtype))
        return x


class MJNet3DTime(_MJNet):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        width = cfg.channel_widths[0]
        k = (cfg.kernel_size, cfg.kernel_size)
        if cfg.independent_encoders:
            self.encoders = [TimeEncoder(cfg, rng) for _ in range(3)]
        else:
            shared = TimeEncoder(cfg, rng)
            self.encoders = [shared, shared, shared]
        self.fuse = ConvBlock(_conv_stack(3 * width, width, cfg.convs_per_block, k, PLANE, cfg, rng), cfg.leaky_alpha)
        self.unet = UNet2d(cfg, rng, attention=cfg.use_attention)
        self.head = Conv(width, cfg.num_classes, (1, 1), PLANE, rng, dtype=cfg.dtype)

    def encode(self, x: Node, training: bool = False, rng: np.random.Generator | None = None) -> list[Node]:
        """Per-slice encoder outputs (N, X, Y, C) for slices i-1, i, i+1."""
        return [encoder(ops.take(x, m, axis=3), training, rng) for m, encoder in enumerate(self.encoders)]

    def forward(self, x: Node, training: bool = False, rng: np.random.Generator | None = None) -> Node:
        x = self._prepare(x)
        h = self.fuse(ops.concat(self.encode(x, training, rng), axis=-1), training, rng)
        h = self.unet(h, training, rng)
        return ops.softmax(self.head(h), axis=-1)


class MJNet4D(_MJNet):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        width = cfg.channel_widths[0]
        k = cfg.kernel_size
        half = (k - 1) // 2
        self.temporal_blocks = [
            ConvBlock(
                [
                    GroupedConv4d(
                        1 if level == 0 and i == 0 else width,
                        width,
                        k,
                        rng,
                        sharing=cfg.weight_sharing,
                        engine=cfg.conv4d_engine,
                        dtype=cfg.dtype,
                    )
                    for i in range(cfg.convs_per_block)
                ],
                cfg.leaky_alpha,
            )
            for level in range(len(cfg.time_pool_schedule))
        ]
        self.encoder_dropout = MCDropout(cfg.dropout_rate)
        # valid on depth: 3 slices -> 1
        self.depth_conv = Conv(width, width, (k, k, 3), (1, 2, 3), rng, padding=(half, half, 0), dtype=cfg.dtype)
        self.depth_block = ConvBlock(
            _conv_stack(width, width, cfg.convs_per_block - 1, (k, k), PLANE, cfg, rng), cfg.leaky_alpha
        )
        self.unet = UNet2d(cfg, rng, attention=False)
        self.decoder_dropout = MCDropout(cfg.dropout_rate)
        self.head = Conv(width, cfg.num_classes, (1, 1), PLANE, rng, dtype=cfg.dtype)

    def forward(self, x: Node, training: bool = False, rng: np.random.Generator | None = None) -> Node:
        h = self._prepare(x)
        for block, pool in zip(self.temporal_blocks, self.config.time_pool_schedule):
            h = ops.maxpool(block(h, training, rng), (1, 1, 1, pool))
        n, width, height, depth, _, channels = h.shape
        h = ops.reshape(h, (n, width, height, depth, channels))
        h = self.encoder_dropout(h, training, rng)
        h = ops.leaky_relu(self.depth_conv(h), self.config.leaky_alpha)
        h = ops.reshape(h, (n, width, height, channels))
        h = self.depth_block(h, training, rng)
        h = self.unet(h, training, rng)
        h = self.decoder_dropout(h, training, rng)
        return ops.softmax(self.head(h), axis=-1)


def build_network(cfg: NetworkConfig) -> MJNet3DTime | MJNet4D:
    cfg = NetworkConfig.parse_document(cfg.model_dump())
    if cfg.architecture == "mjnet_3dtime":
        return MJNet3DTime(cfg)
    return MJNet4D(cfg)
