import numpy as np
import pytest

from oracles import np_filter3x3_sym
from stegalift import lfad
from stegalift import tensor as T
from stegalift.errors import ContractError, DimensionError
from stegalift.gradcheck import max_rel_error


def uniform_bank(h, w):
    return lfad.FilterBank(weights=T.Tensor(np.full((9, h, w), 1.0 / 9.0)),
                           mode=lfad.LOWPASS)


class TestPredict:
    def test_zero_weights_give_uniform_kernels(self, rng):
        feats = T.Tensor(rng.standard_normal((3, 4, 4)))
        bank = lfad.predict_lowpass_filters(feats, T.Tensor(np.zeros((9, 3, 3, 3))))
        assert bank.mode == lfad.LOWPASS
        assert np.allclose(bank.weights.data, 1.0 / 9.0, atol=1e-15)

    def test_simplex_constraint(self, rng):
        feats = T.Tensor(rng.standard_normal((2, 5, 6)) * 3)
        w = T.Tensor(rng.standard_normal((9, 2, 3, 3)))
        bank = lfad.predict_lowpass_filters(feats, w)
        assert bank.weights.data.min() >= 0.0
        sums = bank.weights.data.sum(axis=0)
        assert np.abs(sums - 1.0).max() < 1e-6

    def test_hand_set_logits(self):
        # 1x1 feature plane of ones: every logit equals its filter's tap sum,
        # so a single ln-8 tap puts [ln8, 0, ..., 0] order-free at the center.
        feats = T.Tensor(np.ones((1, 1, 1)))
        w = np.zeros((9, 1, 3, 3))
        w[lfad.CENTER_TAP, 0, 1, 1] = np.log(8.0)
        bank = lfad.predict_lowpass_filters(feats, T.Tensor(w))
        weights = bank.weights.data.reshape(9)
        assert abs(weights[lfad.CENTER_TAP] - 0.5) < 1e-12
        others = np.delete(weights, lfad.CENTER_TAP)
        assert np.abs(others - 1.0 / 16.0).max() < 1e-12

    def test_batched(self, rng):
        feats = T.Tensor(rng.standard_normal((4, 2, 4, 4)))
        bank = lfad.predict_lowpass_filters(feats, T.Tensor(rng.standard_normal((9, 2, 3, 3))))
        assert bank.weights.shape == (4, 9, 4, 4)
        assert np.abs(bank.weights.data.sum(axis=1) - 1.0).max() < 1e-6


class TestApply:
    def test_lowpass_preserves_constants(self, rng):
        for _ in range(10):
            c = float(rng.uniform(-2, 2))
            feats = T.Tensor(rng.standard_normal((2, 4, 4)))
            bank = lfad.predict_lowpass_filters(
                feats, T.Tensor(rng.standard_normal((9, 2, 3, 3))))
            out = lfad.apply_filters(T.Tensor(np.full((2, 4, 4), c)), bank)
            assert np.abs(out.data - c).max() < 1e-9

    def test_uniform_bank_matches_box_filter(self, rng):
        x = rng.standard_normal((1, 4, 4))
        out = lfad.apply_filters(T.Tensor(x), uniform_bank(4, 4))
        assert np.abs(out.data - np_filter3x3_sym(x, np.full((9, 4, 4), 1 / 9.0))).max() < 1e-12

    def test_highpass_kills_constants(self, rng):
        feats = T.Tensor(rng.standard_normal((1, 4, 4)))
        bank = lfad.predict_lowpass_filters(
            feats, T.Tensor(rng.standard_normal((9, 1, 3, 3))))
        hp = lfad.invert_to_highpass(bank)
        out = lfad.apply_filters(T.Tensor(np.full((1, 4, 4), 0.83)), hp)
        assert np.abs(out.data).max() < 1e-9

    def test_matches_bruteforce_up_to_8x8(self, rng):
        for size in (3, 5, 8):
            x = rng.standard_normal((2, size, size))
            logits = rng.standard_normal((9, size, size))
            bank = lfad.FilterBank(
                weights=T.softmax(T.Tensor(logits), axis=0), mode=lfad.LOWPASS)
            out = lfad.apply_filters(T.Tensor(x), bank)
            ref = np_filter3x3_sym(x, bank.weights.data)
            assert np.abs(out.data - ref).max() < 1e-9

    def test_spatial_mismatch(self, rng):
        with pytest.raises(DimensionError):
            lfad.apply_filters(T.Tensor(np.zeros((1, 4, 4))), uniform_bank(5, 5))


class TestInvert:
    def test_uniform_lowpass(self):
        hp = lfad.invert_to_highpass(uniform_bank(2, 2))
        assert hp.mode == lfad.HIGHPASS
        w = hp.weights.data
        assert np.allclose(w[lfad.CENTER_TAP], 8.0 / 9.0, atol=1e-12)
        others = np.delete(w, lfad.CENTER_TAP, axis=0)
        assert np.allclose(others, -1.0 / 9.0, atol=1e-12)

    def test_center_one_degenerate(self):
        w = np.zeros((9, 2, 2))
        w[lfad.CENTER_TAP] = 1.0
        hp = lfad.invert_to_highpass(lfad.FilterBank(weights=T.Tensor(w), mode=lfad.LOWPASS))
        assert np.abs(hp.weights.data).max() < 1e-15

    def test_zero_sum_everywhere(self, rng):
        bank = lfad.predict_lowpass_filters(
            T.Tensor(rng.standard_normal((2, 3, 5))),
            T.Tensor(rng.standard_normal((9, 2, 3, 3))))
        hp = lfad.invert_to_highpass(bank)
        assert np.abs(hp.weights.data.sum(axis=0)).max() < 1e-6

    def test_double_inversion_rejected(self):
        hp = lfad.invert_to_highpass(uniform_bank(2, 2))
        with pytest.raises(ContractError):
            lfad.invert_to_highpass(hp)


class TestGradients:
    def test_apply_filters_finite_differences(self, rng):
        x = T.Tensor(rng.standard_normal((1, 4, 4)), grad_enabled=True)
        logits = T.Tensor(rng.standard_normal((9, 4, 4)), grad_enabled=True)
        probe = T.Tensor(rng.standard_normal((1, 4, 4)))

        def loss(xv, lv):
            bank = lfad.FilterBank(weights=T.softmax(lv, axis=0), mode=lfad.LOWPASS)
            return T.tsum(lfad.apply_filters(xv, bank) * probe)

        assert max_rel_error(loss, [x, logits], rng) <= 1e-4

    def test_predict_and_apply_finite_differences(self, rng):
        feats = T.Tensor(rng.standard_normal((2, 4, 4)), grad_enabled=True)
        conv_w = T.Tensor(rng.standard_normal((9, 2, 3, 3)) * 0.3, grad_enabled=True)
        probe = T.Tensor(rng.standard_normal((2, 4, 4)))

        def loss(fv, wv):
            bank = lfad.predict_lowpass_filters(fv, wv)
            return T.tsum(lfad.apply_filters(fv, bank) * probe)

        assert max_rel_error(loss, [feats, conv_w], rng) <= 1e-4
