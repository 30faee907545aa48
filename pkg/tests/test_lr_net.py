import numpy as np
import pytest
import torch

from radiosr import (
    ConfigError,
    EnvironmentTensor,
    GridSpec,
    SceneGenConfig,
    TransmitterTensor,
    ValidationError,
    generate_scene,
    rasterize_occupancy,
)
from radiosr.models import LRNet, LRNetConfig, build_radiounet3d, lr_param_report
from radiosr.models.blocks import CBAM3d, SelfAttention3d
from radiosr.models.lr_net import lr_preprocess, stack_lr_inputs

CFG = LRNetConfig(base_channels=8, depth=2, bottleneck_blocks=1, dropout_rate=0.1)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(99)


def coarse_batch(batch=2, dims=(8, 8, 8), channels=3):
    return torch.rand(batch, channels, *dims)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            LRNetConfig(base_channels=0)
        with pytest.raises(ConfigError):
            LRNetConfig(depth=0)
        with pytest.raises(ConfigError):
            LRNetConfig(dropout_rate=1.0)


class TestPreprocess:
    def test_desk_shapes(self):
        grid = GridSpec.create((0, 0, 0), 1.0, (32, 32, 32))
        scene = generate_scene(SceneGenConfig(), seed=3)
        env = rasterize_occupancy(scene, grid)
        tx = TransmitterTensor.from_location(grid, (5.3, 20.1, 9.7))
        occ_l, tx_l, los_l = lr_preprocess(env, tx, 4.0)
        assert occ_l.grid.dims == (8, 8, 8)
        assert tx_l.grid.dims == (8, 8, 8)
        assert tx_l.data.sum() == 1
        assert los_l.grid.dims == (8, 8, 8)
        assert los_l.data[tx_l.voxel] == 1
        stacked = stack_lr_inputs(occ_l, tx_l, los_l)
        assert stacked.shape == (3, 8, 8, 8)
        assert stacked.dtype == np.float32


class TestForward:
    def test_output_shape_and_range(self):
        model = LRNet(CFG).eval()
        y = model(coarse_batch())
        assert y.shape == (2, 1, 8, 8, 8)
        assert y.min() > 0.0 and y.max() < 1.0

    def test_depth3_on_16cube(self):
        model = LRNet(LRNetConfig(base_channels=4, depth=3, bottleneck_blocks=1)).eval()
        y = model(torch.rand(1, 3, 16, 16, 16))
        assert y.shape == (1, 1, 16, 16, 16)

    def test_indivisible_dims_raise(self):
        model = LRNet(CFG)
        with pytest.raises(ValidationError):
            model(torch.rand(1, 3, 6, 6, 6))

    def test_wrong_channels_raise(self):
        model = LRNet(CFG)
        with pytest.raises(ValidationError):
            model(torch.rand(1, 2, 8, 8, 8))

    def test_eval_deterministic(self):
        model = LRNet(CFG).eval()
        x = coarse_batch()
        with torch.no_grad():
            a = model(x)
            b = model(x)
        assert torch.equal(a, b)

    def test_dropout_active_in_train_mode(self):
        model = LRNet(
            LRNetConfig(base_channels=8, depth=2, bottleneck_blocks=1, dropout_rate=0.5)
        ).train()
        x = coarse_batch(1)
        torch.manual_seed(0)
        a = model(x)
        torch.manual_seed(1)
        b = model(x)
        assert not torch.equal(a, b)

    def test_batch_permutation_equivariance(self):
        model = LRNet(CFG).eval()
        x = coarse_batch(3)
        with torch.no_grad():
            y = model(x)
            y_perm = model(x[[2, 0, 1]])
        assert torch.allclose(y_perm, y[[2, 0, 1]], atol=1e-6)

    def test_gradients_reach_all_parameters(self):
        model = LRNet(CFG).train()
        y = model(coarse_batch(1))
        y.square().mean().backward()
        missing = [n for n, p in model.named_parameters() if p.grad is None]
        assert missing == []


class TestBaselineVariant:
    def test_two_input_forward(self):
        model = build_radiounet3d(CFG).eval()
        y = model(coarse_batch(channels=2))
        assert y.shape == (2, 1, 8, 8, 8)

    def test_no_attention_modules(self):
        model = build_radiounet3d(CFG)
        kinds = {type(m) for m in model.modules()}
        assert CBAM3d not in kinds
        assert SelfAttention3d not in kinds

    def test_strictly_fewer_parameters(self):
        full = sum(p.numel() for p in LRNet(CFG).parameters())
        plain = sum(p.numel() for p in build_radiounet3d(CFG).parameters())
        assert plain < full


class TestParamReport:
    def test_total_matches_instantiated_model(self):
        report = lr_param_report(CFG)
        torch.manual_seed(0)
        model = LRNet(CFG)
        assert report["total"] == sum(p.numel() for p in model.parameters())
        assert sum(report["by_module"].values()) == report["total"]

    def test_grows_with_width(self):
        small = lr_param_report(LRNetConfig(base_channels=8))
        big = lr_param_report(LRNetConfig(base_channels=16))
        assert big["total"] > small["total"]

    def test_stable_across_calls(self):
        assert lr_param_report(CFG) == lr_param_report(CFG)
