import numpy as np
import pytest
import torch

from radiosr import ConfigError, GridError, GridSpec, RadioMapTensor, ValidationError
from radiosr.losses import (
    IdentityFeatureExtractor,
    LossWeights,
    RandomFeatureExtractor,
    combined_loss,
    l1_loss,
    make_feature_extractor,
    mse_loss,
    perceptual_loss,
)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(5)


class TestBasicTerms:
    def test_constant_offset_values(self):
        t = torch.zeros(4, 4, 4)
        p = torch.full((4, 4, 4), 0.1)
        assert mse_loss(p, t).item() == pytest.approx(0.01, rel=1e-6)
        assert l1_loss(p, t).item() == pytest.approx(0.1, rel=1e-6)

    def test_zero_on_equal(self):
        x = torch.rand(3, 3, 3)
        assert mse_loss(x, x).item() == 0.0
        assert l1_loss(x, x).item() == 0.0

    def test_accepts_numpy_and_radio_maps(self):
        g = GridSpec.create((0, 0, 0), 1.0, (3, 3, 3))
        a = RadioMapTensor(g, np.full((3, 3, 3), 0.25, np.float32), normalized=True)
        b = RadioMapTensor(g, np.full((3, 3, 3), 0.75, np.float32), normalized=True)
        assert mse_loss(a, b).item() == pytest.approx(0.25, rel=1e-6)
        assert l1_loss(np.zeros((2, 2, 2)), np.ones((2, 2, 2))).item() == 1.0

    def test_grid_mismatch(self):
        g1 = GridSpec.create((0, 0, 0), 1.0, (3, 3, 3))
        g2 = GridSpec.create((0, 0, 0), 2.0, (3, 3, 3))
        a = RadioMapTensor(g1, np.zeros((3, 3, 3), np.float32))
        b = RadioMapTensor(g2, np.zeros((3, 3, 3), np.float32))
        with pytest.raises(GridError):
            mse_loss(a, b)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            l1_loss(torch.zeros(2, 2, 2), torch.zeros(2, 2, 3))


class TestFeatureExtractors:
    def test_random_is_seed_deterministic(self):
        x = torch.rand(4, 3, 8, 8)
        a = RandomFeatureExtractor(seed=11)
        b = RandomFeatureExtractor(seed=11)
        for ta, tb in zip(a.taps(x), b.taps(x)):
            assert torch.equal(ta, tb)
        c = RandomFeatureExtractor(seed=12)
        assert not torch.equal(a.taps(x)[0], c.taps(x)[0])

    def test_random_ignores_global_rng(self):
        torch.manual_seed(0)
        a = RandomFeatureExtractor(seed=3)
        torch.manual_seed(999)
        b = RandomFeatureExtractor(seed=3)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_tap_shapes(self):
        fx = RandomFeatureExtractor(seed=0, n_taps=3, base_channels=8)
        taps = fx.taps(torch.rand(2, 3, 16, 16))
        assert [t.shape for t in taps] == [
            torch.Size([2, 8, 16, 16]),
            torch.Size([2, 16, 8, 8]),
            torch.Size([2, 32, 4, 4]),
        ]

    def test_frozen_parameters(self):
        fx = RandomFeatureExtractor(seed=0)
        assert all(not p.requires_grad for p in fx.parameters())

    def test_factory(self):
        assert isinstance(make_feature_extractor("identity"), IdentityFeatureExtractor)
        assert isinstance(make_feature_extractor("random", seed=4), RandomFeatureExtractor)
        with pytest.raises(ConfigError):
            make_feature_extractor("resnet")


class TestPerceptualLoss:
    def test_zero_on_identical_maps(self):
        x = torch.rand(1, 1, 6, 6, 4)
        fx = make_feature_extractor("random", seed=1)
        assert perceptual_loss(x, x, fx).item() == 0.0

    def test_identity_extractor_reduces_to_mse(self):
        p = torch.rand(2, 1, 6, 6, 4)
        t = torch.rand(2, 1, 6, 6, 4)
        fx = IdentityFeatureExtractor()
        perc = perceptual_loss(p, t, fx).item()
        ref = mse_loss(p, t).item()
        assert perc == pytest.approx(ref, rel=1e-6)

    def test_slice_permutation_invariance(self):
        p = torch.rand(1, 1, 6, 6, 5)
        t = torch.rand(1, 1, 6, 6, 5)
        fx = make_feature_extractor("random", seed=2)
        perm = torch.randperm(5)
        a = perceptual_loss(p, t, fx).item()
        b = perceptual_loss(p[..., perm], t[..., perm], fx).item()
        assert a == pytest.approx(b, rel=1e-6)

    def test_gradient_flows_to_prediction_only(self):
        p = torch.rand(1, 1, 4, 4, 4, requires_grad=True)
        t = torch.rand(1, 1, 4, 4, 4)
        fx = make_feature_extractor("random", seed=3)
        perceptual_loss(p, t, fx).backward()
        assert p.grad is not None
        assert all(q.grad is None for q in fx.parameters())

    def test_3d_input_accepted(self):
        x = torch.rand(5, 5, 5)
        fx = IdentityFeatureExtractor()
        assert perceptual_loss(x, x, fx).item() == 0.0

    def test_multichannel_rejected(self):
        fx = IdentityFeatureExtractor()
        with pytest.raises(ValidationError):
            perceptual_loss(torch.rand(1, 2, 4, 4, 4), torch.rand(1, 2, 4, 4, 4), fx)


class TestCombinedLoss:
    def test_frozen_identity_case(self):
        # truth = 0, pred = 0.1 constant, identity extractor, default weights:
        # mse = 0.01, l1 = 0.1, perceptual = 0.01,
        # total = 0.01 + 1.0 * 0.1 + 0.2 * 0.01 = 0.112.
        t = torch.zeros(4, 4, 4)
        p = torch.full((4, 4, 4), 0.1)
        total, parts = combined_loss(p, t, LossWeights(), IdentityFeatureExtractor())
        assert parts["mse"] == pytest.approx(0.01, rel=1e-5)
        assert parts["l1"] == pytest.approx(0.1, rel=1e-6)
        assert parts["perceptual"] == pytest.approx(0.01, rel=1e-5)
        assert total.item() == pytest.approx(0.112, rel=1e-5)

    def test_weight_arithmetic(self):
        # components (0.02, 0.08, 0.1) with weights (1.0, 0.2) combine to 0.12
        w = LossWeights(l1_weight=1.0, perceptual_weight=0.2)
        assert 0.02 + w.l1_weight * 0.08 + w.perceptual_weight * 0.1 == pytest.approx(0.12)

    def test_breakdown_consistent(self):
        p = torch.rand(1, 1, 4, 4, 4)
        t = torch.rand(1, 1, 4, 4, 4)
        w = LossWeights(l1_weight=0.7, perceptual_weight=0.3)
        total, parts = combined_loss(p, t, w, make_feature_extractor("random", seed=6))
        want = parts["mse"] + 0.7 * parts["l1"] + 0.3 * parts["perceptual"]
        assert total.item() == pytest.approx(want, rel=1e-6)
        assert parts["total"] == pytest.approx(total.item(), rel=1e-9)

    def test_differentiable(self):
        p = torch.rand(1, 1, 4, 4, 4, requires_grad=True)
        t = torch.rand(1, 1, 4, 4, 4)
        total, _ = combined_loss(p, t, LossWeights(), make_feature_extractor("random", seed=7))
        total.backward()
        assert p.grad is not None and torch.isfinite(p.grad).all()

    def test_float64_stays_float64(self):
        # Finite-difference checks depend on the objective not quietly
        # truncating double inputs.
        p = torch.rand(4, 4, 4, dtype=torch.float64)
        t = torch.rand(4, 4, 4, dtype=torch.float64)
        total, _ = combined_loss(p, t, LossWeights(), make_feature_extractor("random", seed=7))
        assert total.dtype == torch.float64
        assert mse_loss(p, t.float()).dtype == torch.float64

    def test_weight_validation(self):
        with pytest.raises(ConfigError):
            LossWeights(l1_weight=-1.0)
