"""Evaluation metrics for voxel radio maps.

All metrics accumulate in float64 and accept either bare arrays or
RadioMapTensor instances (whose grids must then match). Aggregation over a
test set is the arithmetic mean of per-sample values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import GridError, UndefinedMetricError, ValidationError
from .grids import RadioMapTensor


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(pred, RadioMapTensor) and isinstance(truth, RadioMapTensor):
        if pred.grid != truth.grid:
            raise GridError("prediction and reference grids differ")
        pred, truth = pred.data, truth.data
    elif isinstance(pred, RadioMapTensor) or isinstance(truth, RadioMapTensor):
        pred = pred.data if isinstance(pred, RadioMapTensor) else pred
        truth = truth.data if isinstance(truth, RadioMapTensor) else truth
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValidationError(f"shape mismatch: prediction {p.shape} vs reference {t.shape}")
    if p.size == 0:
        raise ValidationError("empty inputs")
    return p, t


def nmse(pred, truth) -> float:
    """Squared Frobenius error normalized by the reference energy."""
    p, t = _pair(pred, truth)
    denom = float(np.sum(t * t))
    if denom == 0.0:
        raise UndefinedMetricError("NMSE undefined for an all-zero reference")
    return float(np.sum((p - t) ** 2)) / denom


def rmse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def psnr(pred, truth, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the maps are identical."""
    p, t = _pair(pred, truth)
    if peak <= 0:
        raise ValidationError(f"peak must be positive, got {peak}")
    err = float(np.sum((p - t) ** 2))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(p.size * peak * peak / err)


def ssim3d(pred, truth, window: int = 7, dynamic_range: float = 1.0) -> float:
    """Mean structural similarity over all fully interior cubic windows.

    Local means, variances and covariance are plain (population) box-window
    statistics; stability constants are C1 = (0.01 L)^2 and C2 = (0.03 L)^2
    for dynamic range L.
    """
    p, t = _pair(pred, truth)
    if p.ndim != 3:
        raise ValidationError(f"SSIM expects 3D maps, got {p.ndim}D")
    if window < 1 or window % 2 == 0:
        raise ValidationError(f"window must be odd and positive, got {window}")
    if window > min(p.shape):
        raise ValidationError(f"window {window} exceeds smallest map dim {min(p.shape)}")
    if dynamic_range <= 0:
        raise ValidationError(f"dynamic range must be positive, got {dynamic_range}")

    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    w = (window, window, window)
    pw = np.lib.stride_tricks.sliding_window_view(p, w)
    tw = np.lib.stride_tricks.sliding_window_view(t, w)
    axes = (-3, -2, -1)
    mu_p = pw.mean(axis=axes)
    mu_t = tw.mean(axis=axes)
    var_p = (pw * pw).mean(axis=axes) - mu_p * mu_p
    var_t = (tw * tw).mean(axis=axes) - mu_t * mu_t
    cov = (pw * tw).mean(axis=axes) - mu_p * mu_t
    num = (2.0 * mu_p * mu_t + c1) * (2.0 * cov + c2)
    den = (mu_p * mu_p + mu_t * mu_t + c1) * (var_p + var_t + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class MetricReport:
    """One sample's (or one aggregate's) metric values."""

    nmse: float
    rmse: float
    ssim: float
    psnr: float

    @classmethod
    def compute(
        cls, pred, truth, ssim_window: int = 7, peak: float = 1.0
    ) -> "MetricReport":
        return cls(
            nmse=nmse(pred, truth),
            rmse=rmse(pred, truth),
            ssim=ssim3d(pred, truth, window=ssim_window, dynamic_range=peak),
            psnr=psnr(pred, truth, peak=peak),
        )

    @classmethod
    def averaged(cls, reports: Iterable["MetricReport"]) -> "MetricReport":
        """Arithmetic mean of per-sample reports."""
        rs: Sequence[MetricReport] = list(reports)
        if not rs:
            raise ValidationError("cannot average an empty report list")
        n = len(rs)
        return cls(
            nmse=sum(r.nmse for r in rs) / n,
            rmse=sum(r.rmse for r in rs) / n,
            ssim=sum(r.ssim for r in rs) / n,
            psnr=sum(r.psnr for r in rs) / n,
        )

    def as_dict(self) -> dict[str, float]:
        return {"nmse": self.nmse, "rmse": self.rmse, "ssim": self.ssim, "psnr": self.psnr}
