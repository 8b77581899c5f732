import numpy as np
import pytest

from stegalift import align
from stegalift import tensor as T
from stegalift.errors import ContractError, DimensionError
from stegalift.gradcheck import max_rel_error
from stegalift.sfda import AttentionMap


def np_cov(f):
    centered = f - f.mean(axis=0, keepdims=True)
    return centered.T @ centered / (f.shape[0] - 1)


def make_map(arrs):
    tensors = [T.Tensor(a) for a in arrs]
    return AttentionMap(maps=tensors, maps_plain=tensors)


class TestCoral:
    def test_identical_is_zero(self, rng):
        f = T.Tensor(rng.standard_normal((6, 3)))
        assert align.coral_distance(f, f).item() == 0.0

    def test_translation_invariance(self, rng):
        f = rng.standard_normal((6, 3))
        shifted = f + np.array([1.0, -2.0, 0.5])
        d = align.coral_distance(T.Tensor(f), T.Tensor(shifted))
        assert abs(d.item()) < 1e-12

    def test_scaling_matches_covariance_oracle(self, rng):
        f = rng.standard_normal((5, 3))
        d = align.coral_distance(T.Tensor(f), T.Tensor(2.0 * f))
        sigma = np_cov(f)
        expected = 9.0 * (sigma ** 2).sum() / (4.0 * 9.0)
        assert abs(d.item() - expected) < 1e-12

    def test_requires_two_rows(self, rng):
        f = T.Tensor(rng.standard_normal((1, 3)))
        with pytest.raises(ContractError):
            align.coral_distance(f, f)


class TestMmd:
    def test_identical_is_zero(self, rng):
        f = T.Tensor(rng.standard_normal((5, 3)))
        assert align.mmd_distance(f, f).item() == 0.0

    def test_mean_shift_exactly(self, rng):
        f = rng.standard_normal((5, 3))
        s = np.array([0.5, -1.0, 2.0])
        d = align.mmd_distance(T.Tensor(f), T.Tensor(f + s))
        assert abs(d.item() - (s ** 2).sum()) < 1e-12

    def test_toy_means(self):
        a = np.tile([1.0, 2.0], (3, 1))
        b = np.tile([4.0, 6.0], (3, 1))
        assert abs(align.mmd_distance(T.Tensor(a), T.Tensor(b)).item() - 25.0) < 1e-12


class TestSdaDistance:
    def test_identical_is_zero(self, rng):
        cfg = align.AlignmentConfig()
        f = T.Tensor(rng.standard_normal((6, 3)))
        assert align.sda_distance(f, f, cfg).item() == 0.0

    def test_composition_matches_scalar_oracle(self, rng):
        cfg = align.AlignmentConfig()
        a = T.Tensor(rng.standard_normal((8, 4)) * 0.5)
        b = T.Tensor(rng.standard_normal((8, 4)) * 0.5)
        d_c = align.coral_distance(a, b).item()
        d_m = align.mmd_distance(a, b).item()
        expected = d_c * np.exp(10.0 * d_m)
        assert abs(align.sda_distance(a, b, cfg).item() - expected) < 1e-9 * max(1, expected)

    def test_reference_point(self):
        # d_C = 0.5, d_M = 0.1, gamma = 10 -> 0.5 * e
        assert abs(0.5 * np.exp(10.0 * 0.1) - 1.3591409142295225) < 1e-12

    def test_monotone_in_mean_shift(self, rng):
        cfg = align.AlignmentConfig()
        base = rng.standard_normal((6, 3))
        other = rng.standard_normal((6, 3))
        prev = None
        for shift in (0.0, 0.2, 0.4):
            d = align.sda_distance(T.Tensor(base), T.Tensor(other + shift), cfg)
            if prev is not None:
                assert d.item() > prev
            prev = d.item()

    def test_exponent_clamp_warns_and_stays_finite(self, rng):
        cfg = align.AlignmentConfig()
        a = T.Tensor(rng.standard_normal((4, 3)))
        b = T.Tensor(rng.standard_normal((4, 3)) + 10.0)
        with pytest.warns(RuntimeWarning):
            d = align.sda_distance(a, b, cfg)
        assert np.isfinite(d.item())

    def test_gradient_away_from_clamp(self, rng):
        cfg = align.AlignmentConfig()
        a = T.Tensor(rng.standard_normal((6, 3)) * 0.5, grad_enabled=True)
        b = T.Tensor(rng.standard_normal((6, 3)) * 0.5, grad_enabled=True)

        def loss(av, bv):
            return align.sda_distance(av, bv, cfg)

        assert max_rel_error(loss, [a, b], rng) <= 1e-4


class TestAttentionAlignment:
    def test_identical_maps_zero(self, rng):
        cfg = align.AlignmentConfig()
        m = make_map([rng.standard_normal((4, 4))])
        assert align.attention_alignment_loss(m, m, cfg).item() == 0.0

    def test_single_entry_delta(self, rng):
        cfg = align.AlignmentConfig()
        a = rng.standard_normal((4, 4))
        b = a.copy()
        b[1, 2] += 0.3
        d = align.attention_alignment_loss(make_map([a]), make_map([b]), cfg)
        assert abs(d.item() - 0.09) < 1e-12

    def test_swap_maps_value(self):
        cfg = align.AlignmentConfig()
        a = np.array([[1.0, 0.0], [0.0, 1.0]])
        b = np.array([[0.0, 1.0], [1.0, 0.0]])
        d = align.attention_alignment_loss(make_map([a]), make_map([b]), cfg)
        assert abs(d.item() - 4.0) < 1e-12

    def test_head_mismatch(self, rng):
        cfg = align.AlignmentConfig()
        a = make_map([rng.standard_normal((4, 4))])
        b = make_map([rng.standard_normal((4, 4))] * 2)
        with pytest.raises(DimensionError):
            align.attention_alignment_loss(a, b, cfg)

    def test_sda_metric_batch_mean(self, rng):
        cfg = align.preset("aa_sda")
        a = [make_map([rng.standard_normal((6, 6)), rng.standard_normal((6, 6))])
             for _ in range(2)]
        b = [make_map([rng.standard_normal((6, 6)), rng.standard_normal((6, 6))])
             for _ in range(2)]
        total = align.attention_alignment_loss(a, b, cfg).item()
        singles = [align.attention_alignment_loss(x, y, cfg).item()
                   for x, y in zip(a, b)]
        assert abs(total - np.mean(singles)) < 1e-12


class TestSdaLoss:
    def test_identical_branches_zero(self, rng):
        cfg = align.preset("fa_l2+aa_sda")
        f = T.Tensor(rng.standard_normal((8, 4)))
        m = make_map([rng.standard_normal((4, 4))])
        assert align.sda_loss(f, f, m, m, cfg).item() == 0.0

    def test_aa_disabled_equals_fa_term(self, rng):
        cfg = align.preset("fa_l2")
        a = T.Tensor(rng.standard_normal((8, 4)))
        b = T.Tensor(rng.standard_normal((8, 4)))
        loss = align.sda_loss(a, b, None, None, cfg)
        fa = align.feature_alignment_loss(a, b, cfg)
        assert loss.item() == fa.item()

    def test_preset_matches_term_sum_oracle(self, rng):
        cfg = align.preset("fa_l2+aa_sda")
        fa_arr = rng.standard_normal((8, 4))
        fb_arr = rng.standard_normal((8, 4))
        ma, mb = rng.standard_normal((6, 6)), rng.standard_normal((6, 6))
        loss = align.sda_loss(T.Tensor(fa_arr), T.Tensor(fb_arr),
                              make_map([ma]), make_map([mb]), cfg)
        fa_term = ((fa_arr - fb_arr) ** 2).sum() / fa_arr.size
        aa_term = align.sda_distance(T.Tensor(ma), T.Tensor(mb), cfg).item()
        assert abs(loss.item() - (fa_term + aa_term)) < 1e-9

    def test_all_table_presets_finite(self, rng):
        f_a = T.Tensor(rng.standard_normal((8, 4)) * 0.3)
        f_b = T.Tensor(rng.standard_normal((8, 4)) * 0.3)
        m_a = make_map([rng.standard_normal((4, 4)) * 0.3])
        m_b = make_map([rng.standard_normal((4, 4)) * 0.3])
        for name in ("fa_l2", "aa_sda", "fa_l2+aa_l2", "fa_sda+aa_sda",
                     "fa_l2+aa_sda"):
            cfg = align.preset(name)
            value = align.sda_loss(f_a, f_b, m_a, m_b, cfg).item()
            assert np.isfinite(value), name
        none_cfg = align.preset("none")
        assert not none_cfg.any_enabled
        with pytest.raises(ContractError):
            align.sda_loss(f_a, f_b, m_a, m_b, none_cfg)

    def test_unknown_preset(self):
        with pytest.raises(ContractError):
            align.preset("fa_l3")


class TestSecretBranch:
    def test_distance_nonnegative_properties(self, rng):
        # zero iff sufficient conditions hold, on constructed cases
        cfg = align.AlignmentConfig()
        f = rng.standard_normal((8, 3))
        g = rng.standard_normal((8, 3))
        assert align.coral_distance(T.Tensor(f), T.Tensor(g)).item() >= 0.0
        assert align.mmd_distance(T.Tensor(f), T.Tensor(g)).item() >= 0.0
        assert align.sda_distance(T.Tensor(f), T.Tensor(g), cfg).item() >= 0.0
