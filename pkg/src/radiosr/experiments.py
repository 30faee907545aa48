"""Baselines, the evaluation harness, sweeps and reporting.

Four methods are compared on the test split, mirroring the two-stage
design: the full pipeline ("Proposed"), the coarse network with trilinear
upsampling instead of the SR stage, and both again with the plain two-input
U-Net baseline in stage 1. Sweeps retrain the SR stage while varying the
number of fine-label environments, or rebuild the dataset while varying the
coarse resolution. The complexity report never times anything: it counts
multiply-accumulates from layer shapes via forward hooks.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .data import (
    BuildConfig,
    Manifest,
    Sample,
    _stream_seed,
    build_hybrid_dataset,
    load_sample,
)
from .errors import ConfigError, GridError
from .grids import GridSpec, RadioMapTensor
from .metrics import MetricReport, nmse
from .models import (
    LRNet,
    LRNetConfig,
    SRNet,
    SRNetConfig,
    SelfAttention3d,
    build_radiounet3d,
    build_single_stage,
)
from .training import (
    PhaseSchedule,
    coarse_input_array,
    model_from_checkpoint,
    predict_coarse_maps,
    train_phase1,
    train_phase2,
    train_phase3,
)

METHOD_ORDER = (
    "RadioUNet3D-Trilinear",
    "RadioUNet3D-SR",
    "LRNet-Trilinear",
    "Proposed",
)


def baseline_trilinear(lr_map: RadioMapTensor, fine: GridSpec) -> RadioMapTensor:
    """Trilinear interpolation of a coarse map onto a nested fine grid.

    Values are treated as point samples at coarse voxel centroids; fine
    centroids outside the outermost coarse centroids are linearly
    extrapolated, so any affine field is reproduced exactly. Normalized
    inputs are clipped back to [0, 1] afterwards to keep the output a valid
    normalized map.
    """
    coarse = lr_map.grid
    if fine.origin != coarse.origin or fine.side_lengths != coarse.side_lengths:
        raise GridError("fine and coarse grids must cover the same region")
    if fine.resolution > coarse.resolution:
        raise GridError(
            f"target resolution {fine.resolution} is coarser than the input "
            f"{coarse.resolution}"
        )
    vals = lr_map.data.astype(np.float64)
    lo_idx, fracs, hi_idx = [], [], []
    for a in range(3):
        centers = fine.origin[a] + (np.arange(fine.dims[a]) + 0.5) * fine.resolution
        u = (centers - coarse.origin[a]) / coarse.resolution - 0.5
        n = coarse.dims[a]
        i0 = np.clip(np.floor(u).astype(np.int64), 0, max(n - 2, 0))
        lo_idx.append(i0)
        hi_idx.append(np.minimum(i0 + 1, n - 1))
        fracs.append(u - i0)
    fx = fracs[0][:, None, None]
    fy = fracs[1][None, :, None]
    fz = fracs[2][None, None, :]
    out = np.zeros(fine.dims, dtype=np.float64)
    for bx, wx in ((lo_idx[0], 1.0 - fx), (hi_idx[0], fx)):
        for by, wy in ((lo_idx[1], 1.0 - fy), (hi_idx[1], fy)):
            for bz, wz in ((lo_idx[2], 1.0 - fz), (hi_idx[2], fz)):
                out += vals[np.ix_(bx, by, bz)] * (wx * wy * wz)
    if lr_map.normalized:
        out = np.clip(out, 0.0, 1.0)
    return RadioMapTensor(fine, out.astype(np.float32), normalized=lr_map.normalized)


def _predict_coarse(lr_model: LRNet, samples: list[Sample], lr_resolution: float) -> torch.Tensor:
    stacked = torch.from_numpy(
        np.stack([coarse_input_array(s, lr_resolution, lr_model.input_names) for s in samples])
    )
    return predict_coarse_maps(lr_model, stacked)


def _predict_fine_sr(
    sr_model: SRNet, samples: list[Sample], coarse_maps: torch.Tensor, batch: int = 8
) -> np.ndarray:
    env = torch.from_numpy(np.stack([s.env.data[None].astype(np.float32) for s in samples]))
    tx = torch.from_numpy(np.stack([s.tx.data[None].astype(np.float32) for s in samples]))
    sr_model.eval()
    outs = []
    with torch.no_grad():
        for i in range(0, env.shape[0], batch):
            sl = slice(i, min(i + batch, env.shape[0]))
            outs.append(sr_model(env[sl], tx[sl], coarse_maps[sl]))
    return torch.cat(outs).squeeze(1).numpy()


def predict_method(
    method: str,
    samples: list[Sample],
    manifest: Manifest,
    lr_model: LRNet,
    sr_model: SRNet | None,
) -> list[RadioMapTensor]:
    """Fine-grid normalized predictions for one method over many samples."""
    cfg = manifest.config
    fine, coarse_grid = cfg.fine_grid(), cfg.coarse_grid()
    coarse_maps = _predict_coarse(lr_model, samples, cfg.lr_resolution)
    if method.endswith("Trilinear"):
        return [
            baseline_trilinear(
                RadioMapTensor(coarse_grid, coarse_maps[i, 0].numpy(), normalized=True), fine
            )
            for i in range(len(samples))
        ]
    if sr_model is None:
        raise ConfigError(f"method {method!r} needs an SR checkpoint")
    fine_maps = _predict_fine_sr(sr_model, samples, coarse_maps)
    return [RadioMapTensor(fine, fine_maps[i], normalized=True) for i in range(len(samples))]


def _format_table(rows: dict[str, MetricReport]) -> str:
    header = f"{'Method':<24}{'NMSE ↓':>12}{'RMSE ↓':>12}{'SSIM ↑':>12}{'PSNR ↑':>12}"
    lines = [header, "-" * len(header)]
    for name, r in rows.items():
        psnr_s = "inf" if math.isinf(r.psnr) else f"{r.psnr:.3f}"
        lines.append(
            f"{name:<24}{r.nmse:>12.5f}{r.rmse:>12.5f}{r.ssim:>12.5f}{psnr_s:>12}"
        )
    return "\n".join(lines)


def evaluate_suite(
    base_dir: str | os.PathLike,
    manifest: Manifest,
    checkpoints: dict[str, str | os.PathLike],
    out_dir: str | os.PathLike | None = None,
    ssim_window: int = 3,
    split: str = "test",
) -> dict:
    """Per-method metrics on the fine-label records of one split.

    ``checkpoints`` maps roles to paths: "lr_net" and "sr_net" for the
    proposed pipeline, optionally "radiounet3d" and "radiounet3d_sr" for the
    baseline pair. A truth-vs-truth row validates the harness fixed points.
    """
    records = manifest.records_for(split, hr_only=True)
    if not records:
        raise ConfigError(f"no fine-label records in split {split!r}")
    samples = [load_sample(base_dir, manifest, r) for r in records]
    truths = [s.hr_map for s in samples]

    roles: dict[str, tuple[str, str | None]] = {
        "LRNet-Trilinear": ("lr_net", None),
        "Proposed": ("lr_net", "sr_net"),
        "RadioUNet3D-Trilinear": ("radiounet3d", None),
        "RadioUNet3D-SR": ("radiounet3d", "radiounet3d_sr"),
    }
    methods = [
        m
        for m in METHOD_ORDER
        if roles[m][0] in checkpoints and (roles[m][1] is None or roles[m][1] in checkpoints)
    ]
    if not methods:
        raise ConfigError("no evaluable method for the provided checkpoints")

    loaded: dict[str, torch.nn.Module] = {}

    def _model(role):
        if role not in loaded:
            loaded[role], _ = model_from_checkpoint(checkpoints[role])
        return loaded[role]

    table: dict[str, MetricReport] = {}
    per_sample: list[dict] = []
    for method in methods:
        lr_role, sr_role = roles[method]
        preds = predict_method(
            method, samples, manifest, _model(lr_role), _model(sr_role) if sr_role else None
        )
        reports = []
        for s, p in zip(samples, preds):
            r = MetricReport.compute(p, s.hr_map, ssim_window=ssim_window)
            reports.append(r)
            per_sample.append(
                {"method": method, "env_id": s.record.env_id, "tx_id": s.record.tx_id,
                 **r.as_dict()}
            )
        table[method] = MetricReport.averaged(reports)

    self_reports = [
        MetricReport.compute(t, t, ssim_window=ssim_window) for t in truths
    ]
    table["Truth-vs-Truth"] = MetricReport.averaged(self_reports)

    text = _format_table(table)
    result = {
        "split": split,
        "methods": {k: v.as_dict() for k, v in table.items()},
        "per_sample": per_sample,
        "table": text,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "evaluation.json").write_text(json.dumps(result, indent=2, sort_keys=True))
        (out / "evaluation.txt").write_text(text + "\n")
    return result


def end_to_end_nmse(
    base_dir: str | os.PathLike,
    manifest: Manifest,
    lr_model: LRNet,
    sr_model: SRNet,
    split: str = "test",
) -> float:
    """Mean per-sample NMSE of the full pipeline against fine labels."""
    records = manifest.records_for(split, hr_only=True)
    if not records:
        raise ConfigError(f"no fine-label records in split {split!r}")
    samples = [load_sample(base_dir, manifest, r) for r in records]
    preds = predict_method("Proposed", samples, manifest, lr_model, sr_model)
    return float(np.mean([nmse(p, s.hr_map) for p, s in zip(preds, samples)]))


def restrict_hr_subset(manifest: Manifest, m: int, seed: int) -> Manifest:
    """A view of the manifest keeping fine labels for only m chosen envs.

    Test environments always keep their fine maps (they are evaluation
    labels, not training data). The fine train/val assignment is re-derived
    2:1 over the chosen subset.
    """
    pool = sorted(e for e in manifest.hr_env_ids if manifest.split[e] != "test")
    if not 1 <= m <= len(pool):
        raise ConfigError(f"m must be in [1, {len(pool)}], got {m}")
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(pool, size=m, replace=False).tolist())
    order = [chosen[i] for i in rng.permutation(len(chosen))]
    n_train = max(1, int(np.floor(2 * len(order) / 3)))
    hr_split = {e: ("train" if i < n_train else "val") for i, e in enumerate(order)}
    keep = set(chosen) | {e for e, s in manifest.split.items() if s == "test"}
    records = [
        r if r.env_id in keep else dataclasses.replace(r, hr_map_path=None)
        for r in manifest.records
    ]
    return Manifest(
        config=manifest.config,
        split=dict(manifest.split),
        hr_env_ids=chosen,
        hr_split=hr_split,
        records=records,
    )


def _save_line_plot(xs, ys, xlabel, ylabel, path, hline=None, hline_label=None):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(xs, ys, marker="o")
    if hline is not None:
        ax.axhline(hline, linestyle="--", color="gray", label=hline_label)
        ax.legend()
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sweep_m(
    base_dir: str | os.PathLike,
    manifest: Manifest,
    m_values: list[int],
    phase1_ckpt: str | os.PathLike,
    sr_cfg: SRNetConfig,
    schedule: PhaseSchedule,
    out_dir: str | os.PathLike,
    seed: int = 0,
) -> dict:
    """NMSE versus the number of fine-label environments.

    The coarse network is shared (trained once, passed in); phases 2 and 3
    rerun per subset size. A full-subset run ("full_sr", every non-test
    environment) provides the upper-bound reference. Requires a dataset
    built with fine labels for all non-test environments.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    non_test = sorted(e for e in manifest.env_ids() if manifest.split[e] != "test")
    if not set(non_test) <= set(manifest.hr_env_ids):
        raise ConfigError(
            "sweep over the fine-label subset size requires a dataset built "
            "with fine labels for every non-test environment"
        )
    lr_model, _ = model_from_checkpoint(phase1_ckpt)

    def _run(m: int, tag: str) -> float:
        restricted = restrict_hr_subset(manifest, m, _stream_seed(seed, 20, m))
        run_dir = out / tag
        p2 = train_phase2(base_dir, restricted, sr_cfg, schedule, run_dir,
                          seed=_stream_seed(seed, 21, m))
        p3 = train_phase3(base_dir, restricted, phase1_ckpt, p2.checkpoint_path,
                          schedule, run_dir, seed=_stream_seed(seed, 22, m))
        sr_model, _ = model_from_checkpoint(p3.checkpoint_path)
        return end_to_end_nmse(base_dir, restricted, lr_model, sr_model)

    results = {m: _run(m, f"m{m}") for m in m_values}
    full = _run(len(non_test), "full")

    json_path = out / "sweep_m.json"
    json_path.write_text(
        json.dumps(
            {"nmse_by_m": {str(m): v for m, v in results.items()}, "full_sr": full},
            indent=2,
            sort_keys=True,
        )
    )
    plot_path = out / "sweep_m.png"
    ms = sorted(results)
    _save_line_plot(
        ms,
        [results[m] for m in ms],
        "fine-label environments",
        "NMSE",
        plot_path,
        hline=full,
        hline_label="full subset",
    )
    return {"nmse_by_m": results, "full_sr": full, "json": str(json_path), "plot": str(plot_path)}


def sweep_delta(
    build_cfg: BuildConfig,
    delta_values: list[float],
    lr_cfg: LRNetConfig,
    sr_cfg: SRNetConfig,
    schedule: PhaseSchedule,
    work_dir: str | os.PathLike,
    seed: int = 0,
) -> dict:
    """NMSE versus the coarse grid resolution.

    Each setting rebuilds the dataset at that coarse resolution (same seed,
    so scenes and transmitters are identical across settings), adjusts the
    SR upsample depth to match the ratio, trains all three phases, and
    evaluates the pipeline on the test split.
    """
    work = Path(work_dir)
    work.mkdir(parents=True, exist_ok=True)
    results = {}
    for dl in delta_values:
        ratio = dl / build_cfg.resolution
        u = math.log2(ratio)
        if abs(u - round(u)) > 1e-9 or u < 1:
            raise ConfigError(
                f"coarse resolution {dl} must be resolution x a power of two, got ratio {ratio}"
            )
        cfg_d = dataclasses.replace(build_cfg, lr_resolution=float(dl))
        sr_cfg_d = dataclasses.replace(sr_cfg, upsample_blocks=int(round(u)))
        tag = f"delta{dl:g}"
        ds_dir = work / tag / "data"
        manifest = build_hybrid_dataset(cfg_d, ds_dir)
        run_dir = work / tag / "train"
        p1 = train_phase1(ds_dir, manifest, lr_cfg, schedule, run_dir,
                          seed=_stream_seed(seed, 30))
        p2 = train_phase2(ds_dir, manifest, sr_cfg_d, schedule, run_dir,
                          seed=_stream_seed(seed, 31))
        p3 = train_phase3(ds_dir, manifest, p1.checkpoint_path, p2.checkpoint_path,
                          schedule, run_dir, seed=_stream_seed(seed, 32))
        lr_model, _ = model_from_checkpoint(p1.checkpoint_path)
        sr_model, _ = model_from_checkpoint(p3.checkpoint_path)
        results[dl] = end_to_end_nmse(ds_dir, manifest, lr_model, sr_model)

    json_path = work / "sweep_delta.json"
    json_path.write_text(
        json.dumps({"nmse_by_delta": {str(d): v for d, v in results.items()}},
                   indent=2, sort_keys=True)
    )
    plot_path = work / "sweep_delta.png"
    ds_sorted = sorted(results)
    _save_line_plot(
        ds_sorted,
        [results[d] for d in ds_sorted],
        "coarse resolution (m)",
        "NMSE",
        plot_path,
    )
    return {"nmse_by_delta": results, "json": str(json_path), "plot": str(plot_path)}


_TRILINEAR_MACS_PER_VOXEL = 7  # one multiply-accumulate per pairwise blend


def _trace_macs(model: torch.nn.Module, inputs: tuple) -> tuple[int, int]:
    """Forward the model once, accumulating closed-form MACs per layer.

    Returns (total MACs, peak single-layer activation bytes), the peak being
    input-plus-output elements of the busiest layer at float32.
    """
    totals = {"macs": 0, "peak": 0}
    hooks = []

    def hook(mod, inp, out):
        x = inp[0]
        macs = 0
        if isinstance(mod, nn.Conv3d):
            macs = out.numel() * (mod.in_channels // mod.groups) * int(np.prod(mod.kernel_size))
        elif isinstance(mod, nn.ConvTranspose3d):
            macs = x.numel() * (mod.out_channels // mod.groups) * int(np.prod(mod.kernel_size))
        elif isinstance(mod, nn.Linear):
            macs = out.numel() * mod.in_features
        elif isinstance(mod, SelfAttention3d):
            # Only the two attention matmuls; the 1x1 convs hook themselves.
            b, c = x.shape[0], x.shape[1]
            n = int(np.prod(x.shape[2:]))
            macs = b * n * n * (max(c // 8, 1) + c)
        totals["macs"] += macs
        out_n = out.numel() if isinstance(out, torch.Tensor) else sum(o.numel() for o in out)
        totals["peak"] = max(totals["peak"], (x.numel() + out_n) * 4)

    for mod in model.modules():
        if isinstance(mod, (nn.Conv3d, nn.ConvTranspose3d, nn.Linear, SelfAttention3d)):
            hooks.append(mod.register_forward_hook(hook))
    model.eval()
    with torch.no_grad():
        model(*inputs)
    for h in hooks:
        h.remove()
    return totals["macs"], totals["peak"]


def complexity_report(
    lr_cfg: LRNetConfig,
    sr_cfg: SRNetConfig,
    fine_dims: tuple[int, int, int],
    ratio: int,
) -> dict[str, dict[str, int]]:
    """Analytic parameter, MAC and activation-memory accounting per method.

    ``ratio`` is coarse resolution over fine resolution and must match the
    SR config's scale factor. The single-stage analog runs the coarse
    architecture directly at fine dims; it is reported, never trained.
    """
    if 2**sr_cfg.upsample_blocks != ratio:
        raise ConfigError(
            f"ratio {ratio} does not match the SR scale factor {2**sr_cfg.upsample_blocks}"
        )
    coarse_dims = tuple(d // ratio for d in fine_dims)
    if any(d * ratio != f for d, f in zip(coarse_dims, fine_dims)):
        raise ConfigError(f"fine dims {fine_dims} not divisible by ratio {ratio}")

    fine_vox = int(np.prod(fine_dims))
    x_coarse3 = torch.zeros(1, 3, *coarse_dims)
    x_coarse2 = torch.zeros(1, 2, *coarse_dims)
    x_fine2 = torch.zeros(1, 2, *fine_dims)
    env1 = torch.zeros(1, 1, *fine_dims)
    lrm = torch.zeros(1, 1, *coarse_dims)

    lr_model = LRNet(lr_cfg)
    plain = build_radiounet3d(lr_cfg)
    single = build_single_stage(lr_cfg)
    sr_model = SRNet(sr_cfg)

    def params(m):
        return sum(p.numel() for p in m.parameters())

    lr_macs, lr_peak = _trace_macs(lr_model, (x_coarse3,))
    plain_macs, plain_peak = _trace_macs(plain, (x_coarse2,))
    single_macs, single_peak = _trace_macs(single, (x_fine2,))
    sr_macs, sr_peak = _trace_macs(sr_model, (env1, env1, lrm))

    tri_macs = _TRILINEAR_MACS_PER_VOXEL * fine_vox
    tri_peak = (int(np.prod(coarse_dims)) + fine_vox) * 4

    report = {
        "RadioUNet3D-Trilinear": {
            "params": params(plain),
            "macs": plain_macs + tri_macs,
            "peak_activation_bytes": max(plain_peak, tri_peak),
        },
        "RadioUNet3D-SR": {
            "params": params(plain) + params(sr_model),
            "macs": plain_macs + sr_macs,
            "peak_activation_bytes": max(plain_peak, sr_peak),
        },
        "LRNet-Trilinear": {
            "params": params(lr_model),
            "macs": lr_macs + tri_macs,
            "peak_activation_bytes": max(lr_peak, tri_peak),
        },
        "Proposed": {
            "params": params(lr_model) + params(sr_model),
            "macs": lr_macs + sr_macs,
            "peak_activation_bytes": max(lr_peak, sr_peak),
        },
        "Single-Stage": {
            "params": params(single),
            "macs": single_macs,
            "peak_activation_bytes": single_peak,
        },
    }
    return report


def format_complexity_table(report: dict[str, dict[str, int]]) -> str:
    header = f"{'Method':<24}{'Params':>12}{'MACs':>16}{'Peak act. (B)':>16}"
    lines = [header, "-" * len(header)]
    for name, row in report.items():
        lines.append(
            f"{name:<24}{row['params']:>12,}{row['macs']:>16,}"
            f"{row['peak_activation_bytes']:>16,}"
        )
    return "\n".join(lines)


def render_slices(
    pred: RadioMapTensor,
    truth: RadioMapTensor | None,
    altitudes: list[int],
    out_prefix: str | os.PathLike,
    cmap: str = "viridis",
) -> list[Path]:
    """One image per altitude: a single panel, or prediction beside truth."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if truth is not None and truth.grid != pred.grid:
        raise GridError("prediction and truth grids differ")
    k_max = pred.grid.dims[2]
    for k in altitudes:
        if not 0 <= k < k_max:
            raise IndexError(f"altitude index {k} out of range [0, {k_max})")

    maps = [("predicted", pred)] + ([("truth", truth)] if truth is not None else [])
    vmin = min(float(m.data.min()) for _, m in maps)
    vmax = max(float(m.data.max()) for _, m in maps)
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in altitudes:
        fig, axes = plt.subplots(1, len(maps), figsize=(4 * len(maps), 3.5), squeeze=False)
        for ax, (title, m) in zip(axes[0], maps):
            im = ax.imshow(
                m.data[:, :, k].T, origin="lower", cmap=cmap, vmin=vmin, vmax=vmax
            )
            ax.set_title(f"{title}, altitude {k}")
            ax.set_xlabel("x voxel")
            ax.set_ylabel("y voxel")
        fig.colorbar(im, ax=[a for a in axes[0]], shrink=0.85)
        path = Path(f"{out_prefix}_alt{k:03d}.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths
