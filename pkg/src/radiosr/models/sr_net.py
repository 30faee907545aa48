"""Super-resolution stage: coarse radio map to fine radio map.

Three parts. A dual-path feature extractor embeds the coarse map (single
conv) and the fine-grid environment pair (conv stack), pools the environment
features down, fuses and gates them with CBAM. A dense feature refiner runs
cascaded residual-in-residual dense blocks with a global residual back to
the radio-map features. The high-resolution generator doubles the spatial
size per stage with voxel shuffling, re-injects pooled environment features
at each scale, and maps to one channel scaled by a learnable output scalar
before clamping to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from ..errors import ConfigError, ValidationError
from .blocks import CBAM3d, pool_to, voxel_shuffle


@dataclass(frozen=True)
class SRNetConfig:
    feature_channels: int = 16
    growth_channels: int = 8
    rrdb_blocks: int = 3
    upsample_blocks: int = 2
    residual_scale: float = 0.2
    alpha_init: float = 1.0
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.feature_channels < 1 or self.growth_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if self.rrdb_blocks < 1:
            raise ConfigError(f"rrdb_blocks must be >= 1, got {self.rrdb_blocks}")
        if self.upsample_blocks < 1:
            raise ConfigError(f"upsample_blocks must be >= 1, got {self.upsample_blocks}")
        if not 0.0 < self.residual_scale <= 1.0:
            raise ConfigError(f"residual_scale must be in (0, 1], got {self.residual_scale}")

    @property
    def scale_factor(self) -> int:
        """Total spatial upscale, 2 per upsample block."""
        return 2**self.upsample_blocks


class DualPathFeatureExtractor(nn.Module):
    """Embed the coarse map and the fine environment, fuse at coarse scale."""

    def __init__(self, config: SRNetConfig):
        super().__init__()
        c = config.feature_channels
        act = nn.LeakyReLU(config.leaky_slope, inplace=True)
        self.rm_conv = nn.Conv3d(1, c, 3, padding=1)
        self.env_convs = nn.Sequential(
            nn.Conv3d(2, c, 3, padding=1), act, nn.Conv3d(c, c, 3, padding=1), act
        )
        self.fuse = nn.Conv3d(2 * c, c, 3, padding=1)
        self.attn = CBAM3d(c)

    def forward(
        self, env_pair: torch.Tensor, lr_map: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Returns (fused coarse features, radio-map features, env features)."""
        m = self.rm_conv(lr_map)
        e = self.env_convs(env_pair)
        e_coarse = pool_to(e, lr_map.shape[2:])
        f0 = self.attn(self.fuse(torch.cat([m, e_coarse], dim=1)))
        return f0, m, e


class ResidualDenseBlock(nn.Module):
    """Four densely connected convolutions, fused and residually scaled."""

    def __init__(self, channels: int, growth: int, scale: float, slope: float):
        super().__init__()
        self.scale = scale
        self.act = nn.LeakyReLU(slope, inplace=True)
        self.convs = nn.ModuleList(
            nn.Conv3d(channels + i * growth, growth, 3, padding=1) for i in range(4)
        )
        self.fusion = nn.Conv3d(channels + 4 * growth, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = [x]
        for conv in self.convs:
            feats.append(self.act(conv(torch.cat(feats, dim=1))))
        return x + self.scale * self.fusion(torch.cat(feats, dim=1))


class RRDB(nn.Module):
    """Residual-in-residual dense block: F + scale * chain(F)."""

    def __init__(self, channels: int, growth: int, scale: float, slope: float):
        super().__init__()
        self.scale = scale
        self.rdbs = nn.ModuleList(
            ResidualDenseBlock(channels, growth, scale, slope) for _ in range(3)
        )

    def chain(self, x: torch.Tensor) -> torch.Tensor:
        for rdb in self.rdbs:
            x = rdb(x)
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.scale * self.chain(x)


class DenseFeatureRefiner(nn.Module):
    """Cascaded RRDBs, aggregated and residually tied to the map features."""

    def __init__(self, config: SRNetConfig):
        super().__init__()
        c = config.feature_channels
        self.blocks = nn.ModuleList(
            RRDB(c, config.growth_channels, config.residual_scale, config.leaky_slope)
            for _ in range(config.rrdb_blocks)
        )
        self.aggregate = nn.Conv3d(c, c, 3, padding=1)

    def forward(self, f0: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
        h = f0
        for block in self.blocks:
            h = block(h)
        return self.aggregate(h) + m


class UpsampleBlock(nn.Module):
    """Double the spatial size and re-inject pooled environment features."""

    def __init__(self, config: SRNetConfig):
        super().__init__()
        c = config.feature_channels
        self.act = nn.LeakyReLU(config.leaky_slope, inplace=True)
        self.expand = nn.Conv3d(c, 8 * c, 3, padding=1)
        self.fuse = nn.Conv3d(2 * c, c, 3, padding=1)
        self.attn = CBAM3d(c)

    def forward(self, x: torch.Tensor, env_features: torch.Tensor) -> torch.Tensor:
        h = voxel_shuffle(self.act(self.expand(x)), 2)
        e = pool_to(env_features, h.shape[2:])
        return self.attn(self.act(self.fuse(torch.cat([h, e], dim=1))))


class HighResGenerator(nn.Module):
    """Upsample stages, a refinement stack, and the learnable output scalar."""

    def __init__(self, config: SRNetConfig):
        super().__init__()
        c = config.feature_channels
        self.blocks = nn.ModuleList(UpsampleBlock(config) for _ in range(config.upsample_blocks))
        self.refine = nn.Sequential(
            nn.Conv3d(c, c, 3, padding=1),
            nn.LeakyReLU(config.leaky_slope, inplace=True),
            nn.Conv3d(c, 1, 3, padding=1),
        )
        self.alpha = nn.Parameter(torch.tensor(float(config.alpha_init)))

    def forward(
        self, x: torch.Tensor, env_features: torch.Tensor, return_raw: bool = False
    ):
        for block in self.blocks:
            x = block(x, env_features)
        raw = self.refine(x)
        out = torch.clamp(self.alpha * raw, 0.0, 1.0)
        return (out, raw) if return_raw else out


class SRNet(nn.Module):
    """Full super-resolution network over (occupancy, transmitter, coarse map)."""

    def __init__(self, config: SRNetConfig):
        super().__init__()
        self.config = config
        self.features = DualPathFeatureExtractor(config)
        self.refiner = DenseFeatureRefiner(config)
        self.generator = HighResGenerator(config)

    def forward(
        self, occupancy: torch.Tensor, transmitter: torch.Tensor, lr_map: torch.Tensor
    ) -> torch.Tensor:
        for name, t in (("occupancy", occupancy), ("transmitter", transmitter), ("lr_map", lr_map)):
            if t.ndim != 5 or t.shape[1] != 1:
                raise ValidationError(f"{name} must be (B, 1, I, J, K), got {tuple(t.shape)}")
        if occupancy.shape != transmitter.shape:
            raise ValidationError(
                f"occupancy {tuple(occupancy.shape)} and transmitter "
                f"{tuple(transmitter.shape)} shapes differ"
            )
        r = self.config.scale_factor
        fine = tuple(occupancy.shape[2:])
        coarse = tuple(lr_map.shape[2:])
        if tuple(r * s for s in coarse) != fine:
            raise ValidationError(
                f"fine dims {fine} must be {r}x the coarse dims {coarse} "
                f"(upsample_blocks = {self.config.upsample_blocks})"
            )
        env_pair = torch.cat([occupancy, transmitter], dim=1)
        f0, m, e = self.features(env_pair, lr_map)
        refined = self.refiner(f0, m)
        return self.generator(refined, e)
