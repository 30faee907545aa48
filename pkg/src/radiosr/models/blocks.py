"""Shared 3D network building blocks."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ValidationError


def _norm_groups(channels: int) -> int:
    return math.gcd(channels, 8)


class CBAM3d(nn.Module):
    """Convolutional block attention for 3D features.

    Channel gate: global average and max descriptors through a shared
    two-layer MLP, summed, sigmoid. Spatial gate: channel-wise mean and max
    maps through one wide convolution, sigmoid. Both gates multiply the
    features, so the block is a pointwise contraction.
    """

    def __init__(self, channels: int, reduction: int = 8, spatial_kernel: int = 7):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.mlp = nn.Sequential(
            nn.Conv3d(channels, hidden, 1),
            nn.ReLU(inplace=True),
            nn.Conv3d(hidden, channels, 1),
        )
        self.spatial = nn.Conv3d(2, 1, spatial_kernel, padding=spatial_kernel // 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        avg = x.mean(dim=(2, 3, 4), keepdim=True)
        peak = x.amax(dim=(2, 3, 4), keepdim=True)
        x = x * torch.sigmoid(self.mlp(avg) + self.mlp(peak))
        stats = torch.cat(
            [x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1
        )
        return x * torch.sigmoid(self.spatial(stats))


class ResidualBlock(nn.Module):
    """Two-conv residual block, optionally gated by CBAM on the branch.

    The branch ends in a bare convolution, so zero-initializing that last
    layer turns the whole block into the identity (for equal channel counts).
    """

    def __init__(self, c_in: int, c_out: int, use_cbam: bool = False):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv3d(c_in, c_out, 3, padding=1, bias=False),
            nn.GroupNorm(_norm_groups(c_out), c_out),
            nn.ReLU(inplace=True),
            nn.Conv3d(c_out, c_out, 3, padding=1),
        )
        self.attn = CBAM3d(c_out) if use_cbam else None
        self.skip = nn.Conv3d(c_in, c_out, 1, bias=False) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.body(x)
        if self.attn is not None:
            y = self.attn(y)
        return self.skip(x) + y


class SelfAttention3d(nn.Module):
    """Single-head dot-product attention over flattened voxel positions."""

    def __init__(self, channels: int, key_channels: int | None = None):
        super().__init__()
        kc = key_channels if key_channels is not None else max(1, channels // 8)
        self.to_q = nn.Conv3d(channels, kc, 1)
        self.to_k = nn.Conv3d(channels, kc, 1)
        self.to_v = nn.Conv3d(channels, channels, 1)
        self.proj = nn.Conv3d(channels, channels, 1)
        self.scale = kc**-0.5

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, *spatial = x.shape
        n = spatial[0] * spatial[1] * spatial[2]
        q = self.to_q(x).reshape(b, -1, n)
        k = self.to_k(x).reshape(b, -1, n)
        v = self.to_v(x).reshape(b, c, n)
        attn = torch.softmax(q.transpose(1, 2) @ k * self.scale, dim=-1)  # (b, n, n)
        out = (v @ attn.transpose(1, 2)).reshape(b, c, *spatial)
        return x + self.proj(out)


def voxel_shuffle(x: torch.Tensor, factor: int = 2) -> torch.Tensor:
    """Rearrange channels into space, the 3D analog of pixel shuffle.

    Maps (B, C * r^3, I, J, K) to (B, C, rI, rJ, rK) with the exact index law

        out[b, c, r*i + a, r*j + b2, r*k + d] = in[b, c*r^3 + a*r^2 + b2*r + d, i, j, k]
    """
    b, ch, i, j, k = x.shape
    r = factor
    if ch % (r**3) != 0:
        raise ValidationError(f"channels {ch} not divisible by factor^3 = {r ** 3}")
    c = ch // r**3
    x = x.reshape(b, c, r, r, r, i, j, k)
    x = x.permute(0, 1, 5, 2, 6, 3, 7, 4)
    return x.reshape(b, c, r * i, r * j, r * k)


def voxel_unshuffle(x: torch.Tensor, factor: int = 2) -> torch.Tensor:
    """Exact inverse of :func:`voxel_shuffle`."""
    b, c, ri, rj, rk = x.shape
    r = factor
    if ri % r or rj % r or rk % r:
        raise ValidationError(f"spatial dims {(ri, rj, rk)} not divisible by factor {r}")
    i, j, k = ri // r, rj // r, rk // r
    x = x.reshape(b, c, i, r, j, r, k, r)
    x = x.permute(0, 1, 3, 5, 7, 2, 4, 6)
    return x.reshape(b, c * r**3, i, j, k)


class VoxelShuffle(nn.Module):
    def __init__(self, factor: int = 2):
        super().__init__()
        self.factor = factor

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return voxel_shuffle(x, self.factor)


def pool_to(x: torch.Tensor, spatial) -> torch.Tensor:
    """Adaptive average pooling to a target spatial size.

    For integer downscale ratios this is an exact block mean.
    """
    return F.adaptive_avg_pool3d(x, tuple(spatial))
