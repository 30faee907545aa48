"""Training losses: voxel MSE, voxel l1, and an altitude-sliced perceptual term.

The perceptual term cuts both maps into horizontal slices, runs each slice
through a frozen 2D feature extractor, and averages the squared feature
differences over every slice and tap. The default extractor is a small
random convolution stack derived from a fixed seed, which keeps the loss
fully offline and bit-reproducible; an adapter for torchvision VGG features
exists for parity experiments but nothing here depends on it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, GridError, ValidationError
from .grids import RadioMapTensor


@dataclass(frozen=True)
class LossWeights:
    """total = mse + l1_weight * l1 + perceptual_weight * perceptual."""

    l1_weight: float = 1.0
    perceptual_weight: float = 0.2

    def __post_init__(self):
        if self.l1_weight < 0 or self.perceptual_weight < 0:
            raise ConfigError("loss weights must be non-negative")


def _to_tensor(x) -> torch.Tensor:
    if isinstance(x, RadioMapTensor):
        x = x.data
    if isinstance(x, np.ndarray):
        arr = np.ascontiguousarray(x)
        if not arr.flags.writeable:
            arr = arr.copy()
        x = torch.from_numpy(arr)
    if not isinstance(x, torch.Tensor):
        raise ValidationError(f"expected tensor-like input, got {type(x).__name__}")
    # Floating dtypes pass through so callers can run the whole objective in
    # float64 (finite-difference checks need that); everything else becomes
    # float32, the training dtype.
    return x if x.is_floating_point() else x.float()


def _pair(pred, truth) -> tuple[torch.Tensor, torch.Tensor]:
    if isinstance(pred, RadioMapTensor) and isinstance(truth, RadioMapTensor):
        if pred.grid != truth.grid:
            raise GridError("prediction and reference grids differ")
    p = _to_tensor(pred)
    t = _to_tensor(truth)
    if p.shape != t.shape:
        raise ValidationError(f"shape mismatch: {tuple(p.shape)} vs {tuple(t.shape)}")
    common = torch.promote_types(p.dtype, t.dtype)
    return p.to(common), t.to(common)


def mse_loss(pred, truth) -> torch.Tensor:
    p, t = _pair(pred, truth)
    return F.mse_loss(p, t)


def l1_loss(pred, truth) -> torch.Tensor:
    p, t = _pair(pred, truth)
    return F.l1_loss(p, t)


def _as_volume_batch(x: torch.Tensor) -> torch.Tensor:
    """Normalize to (B, 1, I, J, K)."""
    if x.ndim == 3:
        return x[None, None]
    if x.ndim == 4:
        return x[:, None]
    if x.ndim == 5:
        if x.shape[1] != 1:
            raise ValidationError(f"expected a single channel, got {x.shape[1]}")
        return x
    raise ValidationError(f"cannot interpret shape {tuple(x.shape)} as a voxel map batch")


class FeatureExtractor(nn.Module):
    """Base class: frozen 2D feature taps for the perceptual loss."""

    in_channels: int = 1

    def taps(self, x: torch.Tensor) -> list[torch.Tensor]:
        raise NotImplementedError


class IdentityFeatureExtractor(FeatureExtractor):
    """Single tap, the image itself. Reduces the perceptual term to MSE."""

    in_channels = 1

    def taps(self, x: torch.Tensor) -> list[torch.Tensor]:
        return [x]


class RandomFeatureExtractor(FeatureExtractor):
    """Frozen random convolution stack with one tap per stage.

    Weights come from a dedicated generator seeded by ``seed``, so two
    instances with the same seed produce identical features on any host.
    """

    in_channels = 3

    def __init__(self, seed: int = 0, n_taps: int = 3, base_channels: int = 8):
        super().__init__()
        if n_taps < 1:
            raise ConfigError(f"n_taps must be >= 1, got {n_taps}")
        gen = torch.Generator().manual_seed(int(seed))
        self.stages = nn.ModuleList()
        c_in = self.in_channels
        c_out = base_channels
        for _ in range(n_taps):
            conv = nn.Conv2d(c_in, c_out, 3, padding=1)
            with torch.no_grad():
                fan_in = c_in * 9
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5
                )
                conv.bias.zero_()
            self.stages.append(conv)
            c_in, c_out = c_out, c_out * 2
        for p in self.parameters():
            p.requires_grad_(False)

    def taps(self, x: torch.Tensor) -> list[torch.Tensor]:
        out = []
        h = x
        for i, conv in enumerate(self.stages):
            # Weights stay float32 storage; upcast on the fly so float64
            # inputs keep their precision through the stack.
            h = F.relu(F.conv2d(h, conv.weight.to(h.dtype), conv.bias.to(h.dtype), padding=1))
            out.append(h)
            if i + 1 < len(self.stages):
                h = F.avg_pool2d(h, 2, ceil_mode=True)
        return out


class VGGFeatureExtractor(FeatureExtractor):
    """Adapter over torchvision VGG-16 feature slices (optional dependency)."""

    in_channels = 3

    def __init__(self, taps_at: tuple[int, ...] = (3, 8, 15), pretrained: bool = False):
        super().__init__()
        try:
            from torchvision.models import vgg16
        except ImportError as exc:
            raise ConfigError(
                "the vgg feature extractor requires torchvision to be installed"
            ) from exc
        weights = "IMAGENET1K_V1" if pretrained else None
        features = vgg16(weights=weights).features
        self.slices = nn.ModuleList()
        prev = 0
        for t in taps_at:
            self.slices.append(nn.Sequential(*[features[i] for i in range(prev, t + 1)]))
            prev = t + 1
        for p in self.parameters():
            p.requires_grad_(False)

    def taps(self, x: torch.Tensor) -> list[torch.Tensor]:
        out = []
        h = x
        for s in self.slices:
            h = s(h)
            out.append(h)
        return out


def make_feature_extractor(kind: str = "random", seed: int = 0, n_taps: int = 3) -> FeatureExtractor:
    """Factory for the perceptual feature extractor.

    Kinds: "random" (default, offline-deterministic), "identity", "vgg".
    """
    if kind == "random":
        return RandomFeatureExtractor(seed=seed, n_taps=n_taps)
    if kind == "identity":
        return IdentityFeatureExtractor()
    if kind == "vgg":
        return VGGFeatureExtractor()
    raise ConfigError(f"unknown feature extractor kind {kind!r}")


def perceptual_loss(pred, truth, extractor: FeatureExtractor) -> torch.Tensor:
    """Mean squared feature difference over altitude slices and taps.

    Both maps are cut along the vertical (last) axis into 2D slices; each
    slice is replicated to the extractor's channel count. The result is the
    average over all slices and all taps of the per-tap mean squared
    difference.
    """
    p, t = _pair(pred, truth)
    p = _as_volume_batch(p)
    t = _as_volume_batch(t)

    def slices(x: torch.Tensor) -> torch.Tensor:
        b, _, i, j, k = x.shape
        img = x.permute(0, 4, 1, 2, 3).reshape(b * k, 1, i, j)
        return img.expand(-1, extractor.in_channels, -1, -1)

    sp, stt = slices(p), slices(t)
    terms = [
        F.mse_loss(fp, ft) for fp, ft in zip(extractor.taps(sp), extractor.taps(stt))
    ]
    return torch.stack(terms).mean()


def combined_loss(
    pred, truth, weights: LossWeights, extractor: FeatureExtractor
) -> tuple[torch.Tensor, dict[str, float]]:
    """Composite objective and its detached per-term breakdown."""
    mse = mse_loss(pred, truth)
    l1 = l1_loss(pred, truth)
    perc = perceptual_loss(pred, truth, extractor)
    total = mse + weights.l1_weight * l1 + weights.perceptual_weight * perc
    breakdown = {
        "mse": float(mse.detach()),
        "l1": float(l1.detach()),
        "perceptual": float(perc.detach()),
        "total": float(total.detach()),
    }
    return total, breakdown
