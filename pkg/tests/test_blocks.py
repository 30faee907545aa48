import numpy as np
import pytest
import torch

from radiosr.errors import ValidationError
from radiosr.models import (
    CBAM3d,
    ResidualBlock,
    SelfAttention3d,
    pool_to,
    voxel_shuffle,
    voxel_unshuffle,
)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(1234)


class TestCBAM:
    def test_shape_preserved(self):
        m = CBAM3d(16)
        x = torch.randn(2, 16, 4, 4, 4)
        assert m(x).shape == x.shape

    def test_contraction(self):
        m = CBAM3d(8)
        x = torch.randn(3, 8, 5, 5, 5)
        y = m(x)
        assert torch.all(y.abs() <= x.abs() + 1e-7)

    def test_zero_input_zero_output(self):
        m = CBAM3d(8)
        x = torch.zeros(1, 8, 4, 4, 4)
        assert torch.equal(m(x), x)

    def test_saturated_gates_give_identity(self):
        m = CBAM3d(8)
        with torch.no_grad():
            m.mlp[2].weight.zero_()
            m.mlp[2].bias.fill_(30.0)
            m.spatial.weight.zero_()
            m.spatial.bias.fill_(30.0)
        x = torch.randn(2, 8, 4, 4, 4)
        assert torch.allclose(m(x), x, atol=1e-6)


class TestResidualBlock:
    def test_shapes(self):
        b = ResidualBlock(4, 8, use_cbam=True)
        x = torch.randn(2, 4, 6, 6, 6)
        assert b(x).shape == (2, 8, 6, 6, 6)

    def test_zero_init_identity_plain(self):
        b = ResidualBlock(8, 8, use_cbam=False)
        with torch.no_grad():
            b.body[-1].weight.zero_()
            b.body[-1].bias.zero_()
        x = torch.randn(2, 8, 4, 4, 4)
        assert torch.equal(b(x), x)

    def test_zero_init_identity_with_cbam(self):
        # CBAM of an all-zero branch is all zero (gates multiply zeros), so
        # the zero-initialized block stays exactly the identity.
        b = ResidualBlock(8, 8, use_cbam=True)
        with torch.no_grad():
            b.body[-1].weight.zero_()
            b.body[-1].bias.zero_()
        x = torch.randn(2, 8, 4, 4, 4)
        assert torch.equal(b(x), x)


class TestSelfAttention:
    def test_shape(self):
        m = SelfAttention3d(16)
        x = torch.randn(2, 16, 3, 3, 3)
        assert m(x).shape == x.shape

    def test_zero_projection_identity(self):
        m = SelfAttention3d(8)
        with torch.no_grad():
            m.proj.weight.zero_()
            m.proj.bias.zero_()
        x = torch.randn(1, 8, 3, 3, 3)
        assert torch.equal(m(x), x)


class TestVoxelShuffle:
    def test_frozen_arange_case(self):
        # 8 channels collapse into a 2x2x2 neighborhood in order (a, b, d).
        x = torch.arange(8, dtype=torch.float32).reshape(1, 8, 1, 1, 1)
        y = voxel_shuffle(x, 2)
        assert y.shape == (1, 1, 2, 2, 2)
        assert torch.equal(y[0, 0], torch.arange(8, dtype=torch.float32).reshape(2, 2, 2))

    def test_index_law_exhaustive(self):
        r = 2
        c, i, j, k = 3, 2, 3, 2
        x = torch.randn(2, c * r**3, i, j, k)
        y = voxel_shuffle(x, r)
        assert y.shape == (2, c, r * i, r * j, r * k)
        for b in range(2):
            for cc in range(c):
                for a in range(r):
                    for b2 in range(r):
                        for d in range(r):
                            for ii in range(i):
                                for jj in range(j):
                                    for kk in range(k):
                                        got = y[b, cc, r * ii + a, r * jj + b2, r * kk + d]
                                        want = x[
                                            b, cc * r**3 + a * r**2 + b2 * r + d, ii, jj, kk
                                        ]
                                        assert got == want

    def test_roundtrip(self):
        x = torch.randn(2, 16, 3, 4, 5)
        assert torch.equal(voxel_unshuffle(voxel_shuffle(x, 2), 2), x)
        y = torch.randn(2, 2, 6, 8, 10)
        assert torch.equal(voxel_shuffle(voxel_unshuffle(y, 2), 2), y)

    def test_factor_three(self):
        x = torch.randn(1, 27, 2, 2, 2)
        y = voxel_shuffle(x, 3)
        assert y.shape == (1, 1, 6, 6, 6)
        assert torch.equal(voxel_unshuffle(y, 3), x)

    def test_bad_channels(self):
        with pytest.raises(ValidationError):
            voxel_shuffle(torch.randn(1, 7, 2, 2, 2), 2)

    def test_bad_dims(self):
        with pytest.raises(ValidationError):
            voxel_unshuffle(torch.randn(1, 4, 3, 4, 4), 2)


class TestPoolTo:
    def test_exact_block_mean(self):
        x = torch.randn(2, 3, 4, 4, 4, dtype=torch.float64)
        y = pool_to(x, (2, 2, 2))
        manual = x.reshape(2, 3, 2, 2, 2, 2, 2, 2).mean(dim=(3, 5, 7))
        assert torch.allclose(y, manual, atol=1e-12)

    def test_identity_when_same_size(self):
        x = torch.randn(1, 2, 3, 3, 3)
        assert torch.allclose(pool_to(x, (3, 3, 3)), x)
