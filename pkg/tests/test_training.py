"""Training loop tests: smoke, determinism, checkpoints, phase contracts."""

from pathlib import Path

import pytest
import torch

from radiosr import (
    BuildConfig,
    ConfigError,
    PhaseSchedule,
    SceneGenConfig,
    TrainingDiverged,
    ValidationError,
    build_hybrid_dataset,
    end_to_end_val_loss,
    load_checkpoint,
    model_from_checkpoint,
    parameter_hash,
    train_phase1,
    train_phase2,
    train_phase3,
)
from radiosr.models import LRNetConfig, SRNetConfig
from radiosr.training import _run_phase

LR_CFG = LRNetConfig(base_channels=8, depth=1, bottleneck_blocks=1, dropout_rate=0.1)
SR_CFG = SRNetConfig(feature_channels=8, growth_channels=4, rrdb_blocks=2, upsample_blocks=1)
SCHED = PhaseSchedule(
    epochs=(3, 3, 2),
    learning_rates=(2e-4, 2e-4, 1e-5),
    batch_sizes=(4, 2, 2),
    plateau_patience=2,
)


@pytest.fixture(scope="module")
def ds(tmp_path_factory):
    cfg = BuildConfig(
        n_envs=8,
        tx_per_env=2,
        hr_env_count=3,
        resolution=2.0,
        lr_resolution=4.0,
        scene=SceneGenConfig(
            region_side=(16.0, 16.0, 16.0),
            box_count_range=(2, 4),
            footprint_range=(3.0, 6.0),
            height_range=(6.0, 12.0),
        ),
        tx_height_range=(4.0, 12.0),
        split_fractions=(0.5, 0.25, 0.25),
        seed=7,
    )
    root = tmp_path_factory.mktemp("train_ds")
    manifest = build_hybrid_dataset(cfg, root)
    return root, manifest


@pytest.fixture(scope="module")
def phase1_state(ds, tmp_path_factory):
    root, m = ds
    out = tmp_path_factory.mktemp("p1")
    return train_phase1(root, m, LR_CFG, SCHED, out, seed=3)


@pytest.fixture(scope="module")
def phase2_state(ds, tmp_path_factory):
    root, m = ds
    out = tmp_path_factory.mktemp("p2")
    return train_phase2(root, m, SR_CFG, SCHED, out, seed=3)


@pytest.fixture(scope="module")
def phase3_state(ds, phase1_state, phase2_state, tmp_path_factory):
    root, m = ds
    out = tmp_path_factory.mktemp("p3")
    return train_phase3(
        root, m, phase1_state.checkpoint_path, phase2_state.checkpoint_path, SCHED, out, seed=3
    )


class TestSchedule:
    def test_defaults_match_declared_protocol(self):
        s = PhaseSchedule()
        assert s.epochs == (40, 60, 20)
        assert s.learning_rates == (2e-4, 2e-4, 1e-5)
        assert s.batch_sizes == (32, 4, 4)
        assert s.warmup_fraction == 0.05
        assert (s.plateau_factor, s.plateau_patience) == (0.5, 3)
        assert s.weight_decay == 1e-2

    def test_validation(self):
        with pytest.raises(ConfigError):
            PhaseSchedule(learning_rates=(2e-4, 1e-5, 2e-4))
        with pytest.raises(ConfigError):
            PhaseSchedule(epochs=(0, 1, 1))
        with pytest.raises(ConfigError):
            PhaseSchedule(plateau_factor=1.0)
        with pytest.raises(ConfigError):
            PhaseSchedule(warmup_fraction=1.0)
        with pytest.raises(ConfigError):
            PhaseSchedule(plateau_patience=0)

    def test_for_phase(self):
        s = PhaseSchedule()
        assert s.for_phase(1) == (40, 2e-4, 32)
        assert s.for_phase(3) == (20, 1e-5, 4)
        with pytest.raises(ConfigError):
            s.for_phase(4)


class TestPhase1:
    def test_loss_decreases(self, phase1_state):
        s = phase1_state
        assert s.train_losses[-1] < s.train_losses[0]
        assert len(s.train_losses) == 3
        assert Path(s.checkpoint_path).exists()
        assert Path(s.curve_path).exists()

    def test_curve_file_matches_state(self, phase1_state):
        import json

        lines = [json.loads(l) for l in Path(phase1_state.curve_path).read_text().splitlines()]
        assert [l["train_loss"] for l in lines] == phase1_state.train_losses
        assert [l["monitor_loss"] for l in lines] == phase1_state.monitor_losses
        assert all(set(l["terms"]) == {"mse", "l1", "perceptual", "total"} for l in lines)

    def test_deterministic_repeat(self, ds, phase1_state, tmp_path):
        root, m = ds
        again = train_phase1(root, m, LR_CFG, SCHED, tmp_path / "r", seed=3)
        assert again.train_losses == phase1_state.train_losses
        assert again.monitor_losses == phase1_state.monitor_losses
        assert again.param_hash == phase1_state.param_hash

    def test_different_seed_differs(self, ds, phase1_state, tmp_path):
        root, m = ds
        other = train_phase1(root, m, LR_CFG, SCHED, tmp_path / "o", seed=4)
        assert other.train_losses != phase1_state.train_losses

    def test_lr_trace_warmup_then_nonincreasing(self, phase1_state):
        trace = phase1_state.lr_trace
        base = SCHED.learning_rates[0]
        assert max(trace) <= base + 1e-18
        # 12 train records, batch 4 -> 3 steps/epoch, 9 total, warmup ~ 1 step.
        warm = max(1, round(SCHED.warmup_fraction * len(trace)))
        post = trace[warm:]
        assert all(a >= b for a, b in zip(post, post[1:]))

    def test_best_checkpoint_reload(self, phase1_state):
        model, header = model_from_checkpoint(phase1_state.checkpoint_path)
        assert header["kind"] == "lr_net"
        assert header["meta"]["phase"] == 1
        assert header["meta"]["best_monitor"] == min(phase1_state.monitor_losses)
        assert parameter_hash(model) == header["param_hash"]
        assert header["input_names"] == ["occupancy", "transmitter", "los"]


class TestPhase2:
    def test_loss_decreases(self, phase2_state):
        assert phase2_state.train_losses[-1] < phase2_state.train_losses[0]
        header, _ = load_checkpoint(phase2_state.checkpoint_path)
        assert header["kind"] == "sr_net"

    def test_deterministic_repeat(self, ds, phase2_state, tmp_path):
        root, m = ds
        again = train_phase2(root, m, SR_CFG, SCHED, tmp_path / "r", seed=3)
        assert again.train_losses == phase2_state.train_losses
        assert again.param_hash == phase2_state.param_hash


class TestPhase3:
    def test_frozen_coarse_network(self, phase1_state, phase3_state):
        assert phase3_state.frozen_param_hash == phase1_state.param_hash

    def test_optimizer_covers_only_sr_parameters(self, phase2_state, phase3_state):
        # Same architecture as phase 2, so the same parameter count; the
        # coarse network contributes nothing to the optimizer.
        assert phase3_state.optimizer_param_count == phase2_state.optimizer_param_count

    def test_loss_decreases(self, phase3_state):
        assert phase3_state.train_losses[-1] < phase3_state.train_losses[0]

    def test_end_to_end_loss_is_finite(self, ds, phase1_state, phase3_state):
        root, m = ds
        lr_model, _ = model_from_checkpoint(phase1_state.checkpoint_path)
        sr_model, _ = model_from_checkpoint(phase3_state.checkpoint_path)
        v = end_to_end_val_loss(root, m, lr_model, sr_model, SCHED, split="val")
        assert v > 0 and v < 10

    def test_requires_existing_checkpoints(self, ds, tmp_path):
        root, m = ds
        with pytest.raises(ValidationError, match="no checkpoint"):
            train_phase3(root, m, tmp_path / "nope.ckpt", tmp_path / "also.ckpt", SCHED, tmp_path)

    def test_rejects_wrong_checkpoint_kind(self, ds, phase1_state, phase2_state, tmp_path):
        root, m = ds
        with pytest.raises(ValidationError, match="kind|coarse-network"):
            train_phase3(
                root, m, phase2_state.checkpoint_path, phase1_state.checkpoint_path, SCHED, tmp_path
            )


class TestCheckpointFormat:
    def test_corrupted_magic(self, phase1_state, tmp_path):
        raw = bytearray(Path(phase1_state.checkpoint_path).read_bytes())
        raw[:4] = b"ZZZZ"
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(bytes(raw))
        with pytest.raises(ValidationError, match="magic"):
            load_checkpoint(bad)

    def test_truncated(self, phase1_state, tmp_path):
        raw = Path(phase1_state.checkpoint_path).read_bytes()
        bad = tmp_path / "trunc.ckpt"
        bad.write_bytes(raw[:5])
        with pytest.raises(ValidationError):
            load_checkpoint(bad)


def test_divergence_guard_dumps_state(tmp_path):
    model = torch.nn.Linear(2, 1)

    def step_loss(idx):
        return torch.tensor(float("nan"), requires_grad=True), {}

    with pytest.raises(TrainingDiverged) as ei:
        _run_phase(
            phase=1,
            model=model,
            train_params=list(model.parameters()),
            step_loss=step_loss,
            monitor_loss=lambda: None,
            n_train=4,
            schedule=SCHED,
            out_dir=tmp_path,
            seed=0,
            save_best=lambda epoch, monitor: tmp_path / "unused.ckpt",
        )
    assert ei.value.state_path is not None
    assert Path(ei.value.state_path).exists()
    payload = torch.load(ei.value.state_path, weights_only=False)
    assert payload["phase"] == 1 and "model" in payload and "optimizer" in payload
