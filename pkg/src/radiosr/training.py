"""Three-phase training: coarse pretraining, SR training, frozen fine-tune.

Phase 1 fits the coarse predictor on every low-resolution record. Phase 2
fits the super-resolution network on the few fine-label records using
ground-truth coarse maps as inputs. Phase 3 swaps those inputs for frozen
coarse-network predictions and fine-tunes only the SR parameters.

All phases share one loop: AdamW with decoupled weight decay, per-step
linear warmup into a plateau-reduction schedule, per-epoch JSON-line loss
curves, best-validation checkpointing, and a NaN guard that dumps state and
aborts. Seeds fix initialization, batch order and dropout, so a repeated
run reproduces its loss curve bit for bit on the same hardware.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import random
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import Manifest, Sample, _stream_seed, batch_indices, load_sample
from .errors import ConfigError, TrainingDiverged, ValidationError
from .losses import LossWeights, combined_loss, make_feature_extractor
from .models import (
    LRNet,
    LRNetConfig,
    SRNet,
    SRNetConfig,
    build_radiounet3d,
    lr_preprocess,
    stack_lr_inputs,
)

_CKPT_MAGIC = b"RSCK"
_CKPT_VERSION = 1
_CKPT_PREFIX = struct.Struct("<4sI")
# The perceptual extractor is seeded independently of the run seed so loss
# values stay comparable between runs and phases.
_EXTRACTOR_SEED = 1234


@dataclass(frozen=True)
class PhaseSchedule:
    """Epoch budgets, learning rates and batch sizes for the three phases."""

    epochs: tuple[int, int, int] = (40, 60, 20)
    learning_rates: tuple[float, float, float] = (2e-4, 2e-4, 1e-5)
    batch_sizes: tuple[int, int, int] = (32, 4, 4)
    warmup_fraction: float = 0.05
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    weight_decay: float = 1e-2
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        for name in ("epochs", "learning_rates", "batch_sizes"):
            v = getattr(self, name)
            if len(v) != 3 or any(x <= 0 for x in v):
                raise ConfigError(f"{name} must be three positive values, got {v}")
        if self.learning_rates[2] >= self.learning_rates[1]:
            raise ConfigError(
                f"fine-tune rate {self.learning_rates[2]} must be below "
                f"the SR training rate {self.learning_rates[1]}"
            )
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError(f"warmup_fraction must be in [0, 1), got {self.warmup_fraction}")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError(f"plateau_factor must be in (0, 1), got {self.plateau_factor}")
        if self.plateau_patience < 1:
            raise ConfigError(f"plateau_patience must be >= 1, got {self.plateau_patience}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")

    def for_phase(self, phase: int) -> tuple[int, float, int]:
        if phase not in (1, 2, 3):
            raise ConfigError(f"phase must be 1, 2 or 3, got {phase}")
        i = phase - 1
        return self.epochs[i], self.learning_rates[i], self.batch_sizes[i]


@dataclass
class TrainState:
    """Summary of one finished phase, enough to chain and to audit."""

    phase: int
    epochs_run: int
    best_monitor: float
    checkpoint_path: str
    curve_path: str
    train_losses: list[float]
    monitor_losses: list[float]
    lr_trace: list[float]
    param_hash: str
    optimizer_param_count: int
    frozen_param_hash: str | None = None


def seed_all(seed: int) -> None:
    """Seed every RNG a training run touches."""
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def parameter_hash(module: torch.nn.Module) -> str:
    """SHA-256 over the sorted state dict: names, dtypes, shapes, bytes."""
    h = hashlib.sha256()
    sd = module.state_dict()
    for key in sorted(sd.keys()):
        t = sd[key].detach().cpu().contiguous()
        h.update(key.encode())
        h.update(str(t.dtype).encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(
    path: str | os.PathLike,
    model: torch.nn.Module,
    kind: str,
    config,
    meta: dict,
    input_names: tuple[str, ...] | None = None,
) -> Path:
    """Write a self-describing checkpoint: JSON header plus tensor payload."""
    path = Path(path)
    header = {
        "format_version": _CKPT_VERSION,
        "kind": kind,
        "config": dataclasses.asdict(config),
        "param_hash": parameter_hash(model),
        "meta": meta,
    }
    if input_names is not None:
        header["input_names"] = list(input_names)
    hbytes = json.dumps(header, sort_keys=True).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_CKPT_PREFIX.pack(_CKPT_MAGIC, len(hbytes)))
        f.write(hbytes)
        torch.save(model.state_dict(), f)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | os.PathLike) -> tuple[dict, dict]:
    """Read a checkpoint back into (header, state_dict)."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no checkpoint at {path}")
    with open(path, "rb") as f:
        prefix = f.read(_CKPT_PREFIX.size)
        if len(prefix) < _CKPT_PREFIX.size:
            raise ValidationError(f"truncated checkpoint {path}")
        magic, hlen = _CKPT_PREFIX.unpack(prefix)
        if magic != _CKPT_MAGIC:
            raise ValidationError(f"bad checkpoint magic in {path}")
        try:
            header = json.loads(f.read(hlen))
        except ValueError as exc:
            raise ValidationError(f"corrupt checkpoint header in {path}: {exc}") from exc
        if header["format_version"] != _CKPT_VERSION:
            raise ValidationError(
                f"unsupported checkpoint version {header['format_version']} in {path}"
            )
        state_dict = torch.load(f, map_location="cpu", weights_only=True)
    return header, state_dict


def model_from_checkpoint(path: str | os.PathLike) -> tuple[torch.nn.Module, dict]:
    """Rebuild and verify the model stored in a checkpoint."""
    header, state_dict = load_checkpoint(path)
    kind = header["kind"]
    if kind == "lr_net":
        cfg = LRNetConfig(**header["config"])
        model = LRNet(cfg, input_names=tuple(header["input_names"]))
    elif kind == "sr_net":
        model = SRNet(SRNetConfig(**header["config"]))
    else:
        raise ValidationError(f"unknown checkpoint kind {kind!r} in {path}")
    model.load_state_dict(state_dict)
    model.eval()
    if parameter_hash(model) != header["param_hash"]:
        raise ValidationError(f"checkpoint parameter hash mismatch in {path}")
    return model, header


class _WarmupPlateau:
    """Per-step linear warmup, then stepwise reductions on stalled progress."""

    def __init__(self, base_lr: float, total_steps: int, schedule: PhaseSchedule):
        self.base = base_lr
        self.warmup_steps = max(1, int(round(schedule.warmup_fraction * total_steps)))
        self.factor = schedule.plateau_factor
        self.patience = schedule.plateau_patience
        self.reductions = 0
        self.best = math.inf
        self.stall = 0

    def lr_at(self, step: int) -> float:
        ramp = min(1.0, (step + 1) / self.warmup_steps)
        return self.base * ramp * self.factor**self.reductions

    def observe(self, monitor: float) -> bool:
        """Record an end-of-epoch monitor value; returns True if it improved."""
        if monitor < self.best:
            self.best = monitor
            self.stall = 0
            return True
        self.stall += 1
        if self.stall >= self.patience:
            self.reductions += 1
            self.stall = 0
        return False


def _dump_divergence(out_dir: Path, phase: int, payload: dict) -> Path:
    path = out_dir / f"phase{phase}_diverged.pt"
    torch.save(payload, path)
    return path


def _run_phase(
    *,
    phase: int,
    model: torch.nn.Module,
    train_params: list[torch.nn.Parameter],
    step_loss,
    monitor_loss,
    n_train: int,
    schedule: PhaseSchedule,
    out_dir: Path,
    seed: int,
    save_best,
) -> tuple[list[float], list[float], list[float], float, int, str]:
    """Shared optimizer loop. Returns curves, best monitor, epochs, ckpt path."""
    epochs, base_lr, batch_size = schedule.for_phase(phase)
    steps_per_epoch = max(1, math.ceil(n_train / batch_size))
    controller = _WarmupPlateau(base_lr, epochs * steps_per_epoch, schedule)
    opt = torch.optim.AdamW(train_params, lr=base_lr, weight_decay=schedule.weight_decay)

    curve_path = out_dir / f"phase{phase}_curve.jsonl"
    curve_path.write_text("")
    train_losses: list[float] = []
    monitor_losses: list[float] = []
    lr_trace: list[float] = []
    best = math.inf
    ckpt_path = ""
    step = 0

    for epoch in range(epochs):
        model.train()
        order = batch_indices(n_train, batch_size, _stream_seed(seed, phase, 100 + epoch))
        epoch_sum, term_sums = 0.0, {}
        for idx in order:
            lr_now = controller.lr_at(step)
            for group in opt.param_groups:
                group["lr"] = lr_now
            lr_trace.append(lr_now)

            opt.zero_grad(set_to_none=True)
            loss, terms = step_loss(idx)
            value = float(loss.detach())
            if not math.isfinite(value):
                dump = _dump_divergence(
                    out_dir,
                    phase,
                    {
                        "phase": phase,
                        "epoch": epoch,
                        "step": step,
                        "model": model.state_dict(),
                        "optimizer": opt.state_dict(),
                    },
                )
                raise TrainingDiverged(
                    f"non-finite loss {value} in phase {phase}, epoch {epoch}, step {step}",
                    state_path=str(dump),
                )
            loss.backward()
            opt.step()
            epoch_sum += value * len(idx)
            for k, v in terms.items():
                term_sums[k] = term_sums.get(k, 0.0) + v * len(idx)
            step += 1

        train_mean = epoch_sum / n_train
        train_losses.append(train_mean)
        model.eval()
        with torch.no_grad():
            monitor = monitor_loss()
        monitor = train_mean if monitor is None else monitor
        monitor_losses.append(monitor)
        controller.observe(monitor)
        if monitor < best:
            best = monitor
            ckpt_path = str(save_best(epoch, monitor))
        with open(curve_path, "a") as f:
            f.write(
                json.dumps(
                    {
                        "phase": phase,
                        "epoch": epoch,
                        "train_loss": train_mean,
                        "monitor_loss": monitor,
                        "lr": lr_trace[-1],
                        "terms": {k: v / n_train for k, v in term_sums.items()},
                    },
                    sort_keys=True,
                )
                + "\n"
            )

    return train_losses, monitor_losses, lr_trace, best, epochs, ckpt_path


def _load_samples(base_dir, manifest, records) -> list[Sample]:
    return [load_sample(base_dir, manifest, r) for r in records]


def coarse_input_array(
    sample: Sample, lr_resolution: float, input_names: tuple[str, ...] | None = None
) -> np.ndarray:
    """Stacked coarse input channels for one sample, in branch order."""
    occ_l, tx_l, los_l = lr_preprocess(sample.env, sample.tx, lr_resolution)
    if input_names is None:
        return stack_lr_inputs(occ_l, tx_l, los_l)
    by_name = {"occupancy": occ_l.data, "transmitter": tx_l.data, "los": los_l.data}
    try:
        return np.stack([by_name[n].astype(np.float32) for n in input_names])
    except KeyError as exc:
        raise ConfigError(f"unknown input branch {exc.args[0]!r}") from exc


def _phase1_tensors(
    base_dir, manifest: Manifest, split: str, input_names: tuple[str, ...] | None = None
):
    samples = _load_samples(base_dir, manifest, manifest.records_for(split))
    if not samples:
        return None
    lr_res = manifest.config.lr_resolution
    x = torch.from_numpy(np.stack([coarse_input_array(s, lr_res, input_names) for s in samples]))
    y = torch.from_numpy(np.stack([s.lr_map.data[None] for s in samples]))
    return x, y


def _sr_tensors(samples: list[Sample]):
    env = torch.from_numpy(
        np.stack([s.env.data[None].astype(np.float32) for s in samples])
    )
    tx = torch.from_numpy(np.stack([s.tx.data[None].astype(np.float32) for s in samples]))
    lr = torch.from_numpy(np.stack([s.lr_map.data[None] for s in samples]))
    hr = torch.from_numpy(np.stack([s.hr_map.data[None] for s in samples]))
    return env, tx, lr, hr


def predict_coarse_maps(
    model: LRNet, inputs: torch.Tensor, batch_size: int = 16
) -> torch.Tensor:
    """Frozen coarse-network predictions for stacked (N, 3, I, J, K) inputs."""
    model.eval()
    outs = []
    with torch.no_grad():
        for s in range(0, inputs.shape[0], batch_size):
            outs.append(model(inputs[s : s + batch_size]))
    return torch.cat(outs)


def _mean_loss(step_loss, n: int, batch_size: int) -> float:
    total = 0.0
    for s in range(0, n, batch_size):
        idx = list(range(s, min(s + batch_size, n)))
        loss, _ = step_loss(idx)
        total += float(loss.detach()) * len(idx)
    return total / n


def train_phase1(
    base_dir: str | os.PathLike,
    manifest: Manifest,
    lr_cfg: LRNetConfig,
    schedule: PhaseSchedule,
    out_dir: str | os.PathLike,
    seed: int = 0,
    builder: str = "lr_net",
) -> TrainState:
    """Pretrain a coarse predictor on all low-resolution records.

    ``builder`` selects the architecture: "lr_net" is the full three-branch
    attention model, "radiounet3d" the plain two-input U-Net baseline.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed_all(_stream_seed(seed, 1, 0))
    if builder == "lr_net":
        model = LRNet(lr_cfg)
    elif builder == "radiounet3d":
        model = build_radiounet3d(lr_cfg)
    else:
        raise ConfigError(f"unknown phase-1 builder {builder!r}")

    train = _phase1_tensors(base_dir, manifest, "train", model.input_names)
    if train is None:
        raise ConfigError("phase 1 requires a non-empty train split")
    val = _phase1_tensors(base_dir, manifest, "val", model.input_names)
    extractor = make_feature_extractor("random", seed=_EXTRACTOR_SEED)
    weights = schedule.loss_weights
    x_train, y_train = train
    _, _, batch_size = schedule.for_phase(1)

    def step_loss(idx):
        return combined_loss(model(x_train[idx]), y_train[idx], weights, extractor)

    def val_loss_at(idx):
        return combined_loss(model(val[0][idx]), val[1][idx], weights, extractor)

    def monitor_loss():
        if val is None:
            return None
        return _mean_loss(val_loss_at, val[0].shape[0], batch_size)

    def save_best(epoch, monitor):
        return save_checkpoint(
            out / "phase1.ckpt",
            model,
            "lr_net",
            model.config,
            {"phase": 1, "epoch": epoch, "best_monitor": monitor, "seed": seed},
            input_names=model.input_names,
        )

    tl, ml, lrs, best, epochs, ckpt = _run_phase(
        phase=1,
        model=model,
        train_params=list(model.parameters()),
        step_loss=step_loss,
        monitor_loss=monitor_loss,
        n_train=x_train.shape[0],
        schedule=schedule,
        out_dir=out,
        seed=seed,
        save_best=save_best,
    )
    return TrainState(
        phase=1,
        epochs_run=epochs,
        best_monitor=best,
        checkpoint_path=ckpt,
        curve_path=str(out / "phase1_curve.jsonl"),
        train_losses=tl,
        monitor_losses=ml,
        lr_trace=lrs,
        param_hash=parameter_hash(model),
        optimizer_param_count=sum(1 for _ in model.parameters()),
    )


def train_phase2(
    base_dir: str | os.PathLike,
    manifest: Manifest,
    sr_cfg: SRNetConfig,
    schedule: PhaseSchedule,
    out_dir: str | os.PathLike,
    seed: int = 0,
) -> TrainState:
    """Train the SR network on fine-label records with ground-truth inputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_samples = _load_samples(base_dir, manifest, manifest.records_for("train", hr_only=True))
    if not train_samples:
        raise ConfigError("phase 2 requires fine-label records assigned to train")
    val_samples = _load_samples(base_dir, manifest, manifest.records_for("val", hr_only=True))

    seed_all(_stream_seed(seed, 2, 0))
    model = SRNet(sr_cfg)
    extractor = make_feature_extractor("random", seed=_EXTRACTOR_SEED)
    weights = schedule.loss_weights
    env_t, tx_t, lr_t, hr_t = _sr_tensors(train_samples)
    val = _sr_tensors(val_samples) if val_samples else None
    _, _, batch_size = schedule.for_phase(2)

    def step_loss(idx):
        pred = model(env_t[idx], tx_t[idx], lr_t[idx])
        return combined_loss(pred, hr_t[idx], weights, extractor)

    def val_loss_at(idx):
        pred = model(val[0][idx], val[1][idx], val[2][idx])
        return combined_loss(pred, val[3][idx], weights, extractor)

    def monitor_loss():
        if val is None:
            return None
        return _mean_loss(val_loss_at, val[0].shape[0], batch_size)

    def save_best(epoch, monitor):
        return save_checkpoint(
            out / "phase2.ckpt",
            model,
            "sr_net",
            sr_cfg,
            {"phase": 2, "epoch": epoch, "best_monitor": monitor, "seed": seed},
        )

    tl, ml, lrs, best, epochs, ckpt = _run_phase(
        phase=2,
        model=model,
        train_params=list(model.parameters()),
        step_loss=step_loss,
        monitor_loss=monitor_loss,
        n_train=env_t.shape[0],
        schedule=schedule,
        out_dir=out,
        seed=seed,
        save_best=save_best,
    )
    return TrainState(
        phase=2,
        epochs_run=epochs,
        best_monitor=best,
        checkpoint_path=ckpt,
        curve_path=str(out / "phase2_curve.jsonl"),
        train_losses=tl,
        monitor_losses=ml,
        lr_trace=lrs,
        param_hash=parameter_hash(model),
        optimizer_param_count=sum(1 for _ in model.parameters()),
    )


def train_phase3(
    base_dir: str | os.PathLike,
    manifest: Manifest,
    phase1_ckpt: str | os.PathLike,
    phase2_ckpt: str | os.PathLike,
    schedule: PhaseSchedule,
    out_dir: str | os.PathLike,
    seed: int = 0,
) -> TrainState:
    """Fine-tune the SR network on frozen coarse-network predictions."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lr_model, lr_header = model_from_checkpoint(phase1_ckpt)
    if lr_header["kind"] != "lr_net":
        raise ValidationError(f"phase 3 needs a coarse-network checkpoint, got {lr_header['kind']}")
    sr_model, sr_header = model_from_checkpoint(phase2_ckpt)
    if sr_header["kind"] != "sr_net":
        raise ValidationError(f"phase 3 needs an SR checkpoint, got {sr_header['kind']}")
    sr_cfg = SRNetConfig(**sr_header["config"])

    for p in lr_model.parameters():
        p.requires_grad_(False)
    lr_model.eval()
    frozen_before = parameter_hash(lr_model)

    train_samples = _load_samples(base_dir, manifest, manifest.records_for("train", hr_only=True))
    if not train_samples:
        raise ConfigError("phase 3 requires fine-label records assigned to train")
    val_samples = _load_samples(base_dir, manifest, manifest.records_for("val", hr_only=True))

    lr_res = manifest.config.lr_resolution
    names = lr_model.input_names
    env_t, tx_t, _, hr_t = _sr_tensors(train_samples)
    coarse_in = torch.from_numpy(
        np.stack([coarse_input_array(s, lr_res, names) for s in train_samples])
    )
    pred_lr = predict_coarse_maps(lr_model, coarse_in)
    val = None
    if val_samples:
        v_env, v_tx, _, v_hr = _sr_tensors(val_samples)
        v_in = torch.from_numpy(
            np.stack([coarse_input_array(s, lr_res, names) for s in val_samples])
        )
        val = (v_env, v_tx, predict_coarse_maps(lr_model, v_in), v_hr)

    seed_all(_stream_seed(seed, 3, 0))
    extractor = make_feature_extractor("random", seed=_EXTRACTOR_SEED)
    weights = schedule.loss_weights
    sr_model.train()
    _, _, batch_size = schedule.for_phase(3)

    def step_loss(idx):
        pred = sr_model(env_t[idx], tx_t[idx], pred_lr[idx])
        return combined_loss(pred, hr_t[idx], weights, extractor)

    def val_loss_at(idx):
        pred = sr_model(val[0][idx], val[1][idx], val[2][idx])
        return combined_loss(pred, val[3][idx], weights, extractor)

    def monitor_loss():
        if val is None:
            return None
        return _mean_loss(val_loss_at, val[0].shape[0], batch_size)

    def save_best(epoch, monitor):
        return save_checkpoint(
            out / "phase3.ckpt",
            sr_model,
            "sr_net",
            sr_cfg,
            {
                "phase": 3,
                "epoch": epoch,
                "best_monitor": monitor,
                "seed": seed,
                "frozen_lr_hash": frozen_before,
            },
        )

    sr_params = [p for p in sr_model.parameters() if p.requires_grad]
    lr_param_ids = {id(p) for p in lr_model.parameters()}
    if any(id(p) in lr_param_ids for p in sr_params):
        raise ValidationError("optimizer for phase 3 must not cover coarse-network parameters")

    tl, ml, lrs, best, epochs, ckpt = _run_phase(
        phase=3,
        model=sr_model,
        train_params=sr_params,
        step_loss=step_loss,
        monitor_loss=monitor_loss,
        n_train=env_t.shape[0],
        schedule=schedule,
        out_dir=out,
        seed=seed,
        save_best=save_best,
    )

    frozen_after = parameter_hash(lr_model)
    if frozen_after != frozen_before:
        raise ValidationError("coarse-network parameters changed during phase 3")

    return TrainState(
        phase=3,
        epochs_run=epochs,
        best_monitor=best,
        checkpoint_path=ckpt,
        curve_path=str(out / "phase3_curve.jsonl"),
        train_losses=tl,
        monitor_losses=ml,
        lr_trace=lrs,
        param_hash=parameter_hash(sr_model),
        optimizer_param_count=len(sr_params),
        frozen_param_hash=frozen_after,
    )


def end_to_end_val_loss(
    base_dir: str | os.PathLike,
    manifest: Manifest,
    lr_model: LRNet,
    sr_model: SRNet,
    schedule: PhaseSchedule,
    split: str = "val",
) -> float:
    """Combined loss of the full pipeline against fine labels on one split."""
    samples = _load_samples(base_dir, manifest, manifest.records_for(split, hr_only=True))
    if not samples:
        raise ConfigError(f"no fine-label records in split {split!r}")
    env_t, tx_t, _, hr_t = _sr_tensors(samples)
    coarse_in = torch.from_numpy(
        np.stack(
            [
                coarse_input_array(s, manifest.config.lr_resolution, lr_model.input_names)
                for s in samples
            ]
        )
    )
    pred_lr = predict_coarse_maps(lr_model, coarse_in)
    extractor = make_feature_extractor("random", seed=_EXTRACTOR_SEED)
    sr_model.eval()
    total = 0.0
    with torch.no_grad():
        for s in range(0, env_t.shape[0], 8):
            sl = slice(s, min(s + 8, env_t.shape[0]))
            pred = sr_model(env_t[sl], tx_t[sl], pred_lr[sl])
            loss, _ = combined_loss(pred, hr_t[sl], schedule.loss_weights, extractor)
            total += float(loss) * (sl.stop - sl.start)
    return total / env_t.shape[0]
