import numpy as np
import pytest

from oracles import np_dwt_haar
from stegalift import tensor as T
from stegalift import wavelet as W
from stegalift.errors import DimensionError
from stegalift.gradcheck import max_rel_error


class TestForward:
    def test_constant_detail_bands_vanish(self):
        v = 0.37
        bands = W.dwt_haar(T.Tensor(np.full((2, 6, 6), v)))
        for band in (bands.lh, bands.hl, bands.hh):
            assert np.abs(band.data).max() < 1e-15

    def test_constant_ll_doubles(self):
        v = 0.37
        bands = W.dwt_haar(T.Tensor(np.full((1, 4, 4), v)))
        assert np.allclose(bands.ll.data, 2 * v, atol=1e-15)

    def test_matches_blockwise_oracle(self, rng):
        x = rng.standard_normal((2, 6, 8))
        bands = W.dwt_haar(T.Tensor(x))
        oll, olh, ohl, ohh = np_dwt_haar(x)
        assert np.abs(bands.ll.data - oll).max() < 1e-12
        assert np.abs(bands.lh.data - olh).max() < 1e-12
        assert np.abs(bands.hl.data - ohl).max() < 1e-12
        assert np.abs(bands.hh.data - ohh).max() < 1e-12

    def test_odd_dims_rejected(self):
        with pytest.raises(DimensionError):
            W.dwt_haar(T.Tensor(np.zeros((1, 5, 4))))


class TestInverse:
    def test_zero_bands_give_zero(self):
        z = T.Tensor(np.zeros((1, 2, 2)))
        out = W.idwt_haar(W.SubBands(ll=z, lh=z, hl=z, hh=z, source_shape=(1, 4, 4)))
        assert np.array_equal(out.data, np.zeros((1, 4, 4)))

    def test_ll_only_constant(self):
        v = 0.42
        ll = T.Tensor(np.full((1, 2, 2), 2 * v))
        z = T.Tensor(np.zeros((1, 2, 2)))
        out = W.idwt_haar(W.SubBands(ll=ll, lh=z, hl=z, hh=z, source_shape=(1, 4, 4)))
        assert np.allclose(out.data, v, atol=1e-15)

    def test_band_shape_mismatch(self):
        a = T.Tensor(np.zeros((1, 2, 2)))
        b = T.Tensor(np.zeros((1, 3, 2)))
        with pytest.raises(DimensionError):
            W.idwt_haar(W.SubBands(ll=a, lh=b, hl=a, hh=a, source_shape=(1, 4, 4)))


class TestRoundTripAndEnergy:
    def test_perfect_reconstruction_randomized(self, rng):
        for _ in range(50):
            h = int(rng.integers(4, 17)) * 2
            w = int(rng.integers(4, 17)) * 2
            x = rng.standard_normal((1, h, w))
            rec = W.idwt_haar(W.dwt_haar(T.Tensor(x)))
            assert np.abs(rec.data - x).max() < 1e-9

    def test_roundtrip_from_bands(self, rng):
        bands = W.dwt_haar(T.Tensor(rng.standard_normal((2, 8, 8))))
        again = W.dwt_haar(W.idwt_haar(bands))
        for a, b in zip(bands.bands(), again.bands()):
            assert np.abs(a.data - b.data).max() < 1e-9

    def test_energy_conservation(self, rng):
        for _ in range(50):
            x = rng.standard_normal((3, 10, 12))
            bands = W.dwt_haar(T.Tensor(x))
            e_bands = sum(float((t.data ** 2).sum()) for t in bands.bands())
            e_src = float((x ** 2).sum())
            assert abs(e_bands - e_src) / e_src < 1e-9

    def test_linearity(self, rng):
        x = rng.standard_normal((1, 8, 8))
        y = rng.standard_normal((1, 8, 8))
        a, b = 1.7, -0.3
        lhs = W.dwt_haar(T.Tensor(a * x + b * y))
        rx = W.dwt_haar(T.Tensor(x))
        ry = W.dwt_haar(T.Tensor(y))
        for lb, xb, yb in zip(lhs.bands(), rx.bands(), ry.bands()):
            assert np.abs(lb.data - (a * xb.data + b * yb.data)).max() < 1e-9


class TestGradients:
    def test_dwt_idwt_gradients(self, rng):
        x = T.Tensor(rng.standard_normal((1, 4, 4)), grad_enabled=True)
        probe_b = T.Tensor(rng.standard_normal((1, 2, 2)))
        probe_x = T.Tensor(rng.standard_normal((1, 4, 4)))

        def loss(xv):
            bands = W.dwt_haar(xv)
            rec = W.idwt_haar(bands)
            return T.tsum(bands.hh * probe_b) + T.tsum(rec * probe_x)

        assert max_rel_error(loss, [x], rng) <= 1e-4

    def test_batched_input(self, rng):
        x = rng.standard_normal((4, 2, 6, 6))
        bands = W.dwt_haar(T.Tensor(x))
        assert bands.ll.shape == (4, 2, 3, 3)
        rec = W.idwt_haar(bands)
        assert np.abs(rec.data - x).max() < 1e-12
