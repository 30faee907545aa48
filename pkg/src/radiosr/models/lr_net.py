"""Coarse-stage predictor: an attention-augmented 3D U-Net.

Inputs are three binary voxel tensors at the coarse resolution (occupancy,
one-hot transmitter, line of sight), each embedded by its own convolutional
branch, fused, then passed through a U-Net whose encoder and decoder stages
use residual CBAM blocks and whose bottleneck stacks residual blocks with a
single-head self-attention layer. The head refines the full-resolution
features with CBAM and maps them to one sigmoid channel.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..errors import ConfigError, ValidationError
from ..grids import (
    EnvironmentTensor,
    LosTensor,
    TransmitterTensor,
    bresenham_los,
    downscale_occupancy,
    downscale_transmitter,
)
from .blocks import CBAM3d, ResidualBlock, SelfAttention3d, _norm_groups

DEFAULT_BRANCHES = ("occupancy", "transmitter", "los")


@dataclass(frozen=True)
class LRNetConfig:
    base_channels: int = 16
    depth: int = 2
    bottleneck_blocks: int = 2
    dropout_rate: float = 0.1
    attention_enabled: bool = True

    def __post_init__(self):
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.bottleneck_blocks < 1:
            raise ConfigError(f"bottleneck_blocks must be >= 1, got {self.bottleneck_blocks}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


def lr_preprocess(
    env: EnvironmentTensor, tx: TransmitterTensor, coarse_resolution: float
) -> tuple[EnvironmentTensor, TransmitterTensor, LosTensor]:
    """Downscale occupancy and transmitter, then derive coarse line of sight."""
    occ_l = downscale_occupancy(env, coarse_resolution)
    tx_l = downscale_transmitter(tx, coarse_resolution)
    los_l = bresenham_los(occ_l, tx_l)
    return occ_l, tx_l, los_l


def stack_lr_inputs(
    occ: EnvironmentTensor, tx: TransmitterTensor, los: LosTensor
) -> np.ndarray:
    """Stack the three coarse inputs into a (3, I, J, K) float32 array."""
    return np.stack(
        [occ.data.astype(np.float32), tx.data.astype(np.float32), los.data.astype(np.float32)]
    )


class LRNet(nn.Module):
    """Coarse radio map predictor. See the module docstring for the layout."""

    def __init__(self, config: LRNetConfig, input_names: tuple[str, ...] = DEFAULT_BRANCHES):
        super().__init__()
        if len(input_names) < 1:
            raise ConfigError("at least one input branch is required")
        self.config = config
        self.input_names = tuple(input_names)
        base = config.base_channels
        attn = config.attention_enabled

        self.branches = nn.ModuleList(
            nn.Sequential(
                nn.Conv3d(1, base, 3, padding=1, bias=False),
                nn.GroupNorm(_norm_groups(base), base),
                nn.ReLU(inplace=True),
            )
            for _ in self.input_names
        )
        self.fuse = nn.Conv3d(base * len(self.input_names), base, 1)

        chans = [base * 2**d for d in range(config.depth + 1)]
        self.encoder = nn.ModuleList(
            ResidualBlock(chans[d], chans[d + 1], use_cbam=attn) for d in range(config.depth)
        )
        self.pool = nn.MaxPool3d(2)

        c_bot = chans[-1]
        self.bottleneck = nn.Sequential(
            *[ResidualBlock(c_bot, c_bot) for _ in range(config.bottleneck_blocks)]
        )
        self.self_attention = SelfAttention3d(c_bot) if attn else None
        self.dropout = nn.Dropout3d(config.dropout_rate)
        self.bottleneck_out = nn.Sequential(
            nn.Conv3d(c_bot, c_bot, 3, padding=1, bias=False),
            nn.GroupNorm(_norm_groups(c_bot), c_bot),
            nn.ReLU(inplace=True),
        )

        self.upsamplers = nn.ModuleList(
            nn.ConvTranspose3d(chans[d], chans[d - 1], 2, stride=2)
            for d in range(config.depth, 0, -1)
        )
        self.decoder = nn.ModuleList(
            ResidualBlock(chans[d - 1] + chans[d], chans[d - 1], use_cbam=attn)
            for d in range(config.depth, 0, -1)
        )

        self.head_attention = CBAM3d(base) if attn else nn.Identity()
        self.head = nn.Conv3d(base, 1, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 5 or x.shape[1] != len(self.input_names):
            raise ValidationError(
                f"expected (B, {len(self.input_names)}, I, J, K) input, got {tuple(x.shape)}"
            )
        stride = 2**self.config.depth
        if any(s % stride != 0 for s in x.shape[2:]):
            raise ValidationError(
                f"spatial dims {tuple(x.shape[2:])} must be divisible by 2^depth = {stride}"
            )
        h = self.fuse(
            torch.cat([br(x[:, i : i + 1]) for i, br in enumerate(self.branches)], dim=1)
        )
        skips = []
        for block in self.encoder:
            h = block(h)
            skips.append(h)
            h = self.pool(h)
        h = self.bottleneck(h)
        if self.self_attention is not None:
            h = self.self_attention(h)
        h = self.dropout(h)
        h = self.bottleneck_out(h)
        for up, block in zip(self.upsamplers, self.decoder):
            h = up(h)
            skip = skips.pop()
            if skip.shape[2:] != h.shape[2:]:
                raise ValidationError(
                    f"decoder stage dims {tuple(h.shape[2:])} do not match the "
                    f"skip tensor dims {tuple(skip.shape[2:])}"
                )
            h = block(torch.cat([h, skip], dim=1))
        return torch.sigmoid(self.head(self.head_attention(h)))


def build_radiounet3d(config: LRNetConfig) -> LRNet:
    """Baseline: same U-Net depth and widths, no attention, no LoS branch."""
    plain = LRNetConfig(
        base_channels=config.base_channels,
        depth=config.depth,
        bottleneck_blocks=config.bottleneck_blocks,
        dropout_rate=config.dropout_rate,
        attention_enabled=False,
    )
    return LRNet(plain, input_names=("occupancy", "transmitter"))


def build_single_stage(config: LRNetConfig) -> LRNet:
    """Single-stage analog: the coarse architecture applied at full resolution.

    Takes occupancy and transmitter only (no coarse grid, so no LoS tensor is
    precomputed). Used for complexity accounting, never trained here.
    """
    return LRNet(config, input_names=("occupancy", "transmitter"))


def lr_param_report(config: LRNetConfig, input_names: tuple[str, ...] = DEFAULT_BRANCHES) -> dict:
    """Parameter counts grouped by top-level submodule, plus the total."""
    model = LRNet(config, input_names=input_names)
    groups: dict[str, int] = defaultdict(int)
    total = 0
    for name, p in model.named_parameters():
        groups[name.split(".")[0]] += p.numel()
        total += p.numel()
    return {"total": total, "by_module": dict(sorted(groups.items()))}
