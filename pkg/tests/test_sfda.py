import numpy as np
import pytest

from oracles import (np_diff_attention_head, np_gelu, np_rms,
                     np_softmax_rows, np_wfda, tokens)
from stegalift import sfda
from stegalift import tensor as T
from stegalift.errors import ContractError, DimensionError
from stegalift.gradcheck import max_rel_error

C, D = 4, 3


def make_params(rng, heads=1, head_dim=D, wfda_enabled=True, **overrides):
    p = sfda.init_diff_attn(rng, C, heads, head_dim, wfda_enabled=wfda_enabled)
    for name, value in overrides.items():
        p.slots[name] = T.Tensor(value, grad_enabled=True)
    return p


def set_lambda(p, dot1, dot2):
    d = p.head_dim
    e = np.zeros(d)
    e[0] = 1.0
    p.slots["lam_q1"] = T.Tensor(dot1 * e, grad_enabled=True)
    p.slots["lam_k1"] = T.Tensor(e, grad_enabled=True)
    p.slots["lam_q2"] = T.Tensor(dot2 * e, grad_enabled=True)
    p.slots["lam_k2"] = T.Tensor(e, grad_enabled=True)


def tie_streams(p):
    for i in range(p.heads):
        p.slots["h%d.wlq" % i] = p.slots["h%d.wq" % i]
        p.slots["h%d.wlk" % i] = p.slots["h%d.wk" % i]


class TestEffectiveLambda:
    def test_zero_vectors_give_init(self, rng):
        p = make_params(rng)
        zero = np.zeros(p.head_dim)
        for name in ("lam_q1", "lam_k1", "lam_q2", "lam_k2"):
            p.slots[name] = T.Tensor(zero, grad_enabled=True)
        assert abs(sfda.effective_lambda(p).item() - 0.8) < 1e-15

    def test_clamped_above_one(self, rng):
        p = make_params(rng)
        set_lambda(p, np.log(3.0), np.log(2.0))  # 3 - 2 + 0.8 -> clamp
        assert sfda.effective_lambda(p).item() == 1.0

    def test_equal_dots_cancel(self, rng):
        p = make_params(rng)
        set_lambda(p, 0.7, 0.7)
        assert abs(sfda.effective_lambda(p).item() - 0.8) < 1e-12


class TestProjectQKV:
    def test_zero_lowpass_stream(self, rng):
        p = make_params(rng)
        x = T.Tensor(rng.standard_normal((4, C)))
        xl = T.Tensor(np.zeros((4, C)))
        _, q2, _, k2, _ = sfda.project_qkv(x, xl, p)
        assert np.abs(q2[0].data).max() < 1e-12
        assert np.abs(k2[0].data).max() < 1e-12

    def test_matches_hand_matmul(self, rng):
        p = make_params(rng)
        x = rng.standard_normal((2, C))
        xl = rng.standard_normal((2, C))
        q1, q2, k1, k2, v = sfda.project_qkv(T.Tensor(x), T.Tensor(xl), p)
        xn, ln = np_rms(x), np_rms(xl)
        assert np.abs(q1[0].data - xn @ p.slots["h0.wq"].data).max() < 1e-12
        assert np.abs(q2[0].data - ln @ p.slots["h0.wlq"].data).max() < 1e-12
        assert np.abs(v[0].data - xn @ p.slots["h0.wv"].data).max() < 1e-12

    def test_tied_streams_coincide(self, rng):
        p = make_params(rng)
        tie_streams(p)
        x = rng.standard_normal((3, C))
        q1, q2, k1, k2, _ = sfda.project_qkv(T.Tensor(x), T.Tensor(x), p)
        assert np.abs(q1[0].data - q2[0].data).max() < 1e-15
        assert np.abs(k1[0].data - k2[0].data).max() < 1e-15

    def test_stream_shape_mismatch(self, rng):
        p = make_params(rng)
        with pytest.raises(DimensionError):
            sfda.project_qkv(T.Tensor(np.zeros((4, C))),
                             T.Tensor(np.zeros((5, C))), p)


class TestWfda:
    def test_rows_sum_to_zero(self, rng):
        p = make_params(rng, heads=2)
        x_map = T.Tensor(rng.standard_normal((C, 4, 4)))
        for m in sfda.wfda(x_map, p):
            assert np.abs(m.data.sum(axis=1)).max() < 1e-12

    def test_constant_map_structure(self, rng):
        p = make_params(rng)
        v = 0.3
        x_map = T.Tensor(np.full((C, 4, 4), v))
        (out,) = sfda.wfda(x_map, p)
        # detail bands vanish -> hh/hl/lh terms are uniform; only ll attends
        ll_tokens = np.full((4, C), 2 * v)
        q = ll_tokens @ p.slots["h0.wllq"].data
        k = ll_tokens @ p.slots["h0.wllk"].data
        s = np_softmax_rows(q @ k.T / np.sqrt(p.head_dim))
        coarse = np.full((4, 4), 0.25) - s  # U + U - U - S
        par = np.array([0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3])
        expected = coarse[np.ix_(par, par)]
        assert np.abs(out.data - expected).max() < 1e-12

    def test_matches_bruteforce_oracle(self, rng):
        p = make_params(rng, heads=2)
        x_map = rng.standard_normal((C, 4, 4))
        maps = sfda.wfda(T.Tensor(x_map), p)
        for i, m in enumerate(maps):
            wq = {b: p.slots["h%d.w%sq" % (i, b)].data for b in ("hh", "hl", "lh", "ll")}
            wk = {b: p.slots["h%d.w%sk" % (i, b)].data for b in ("hh", "hl", "lh", "ll")}
            ref = np_wfda(x_map, wq, wk, p.head_dim)
            assert np.abs(m.data - ref).max() < 1e-9

    def test_odd_dims_rejected(self, rng):
        p = make_params(rng)
        with pytest.raises(DimensionError):
            sfda.wfda(T.Tensor(np.zeros((C, 3, 4))), p)

    def test_disabled_layer_rejected(self, rng):
        p = make_params(rng, wfda_enabled=False)
        with pytest.raises(ContractError):
            sfda.wfda(T.Tensor(np.zeros((C, 4, 4))), p)


class TestDiffAttention:
    def test_reduces_to_standard_attention(self, rng):
        p = make_params(rng, wfda_enabled=False)
        set_lambda(p, 0.0, np.log(2.0))  # 1 - 2 + 0.8 < 0 -> clamp to 0
        assert sfda.effective_lambda(p).item() == 0.0
        x = rng.standard_normal((6, C))
        xl = rng.standard_normal((6, C))
        attn = sfda.diff_attention(T.Tensor(x), T.Tensor(xl), None, p)
        xn = np_rms(x)
        ref = np_softmax_rows((xn @ p.slots["h0.wq"].data)
                              @ (xn @ p.slots["h0.wk"].data).T / np.sqrt(D))
        assert np.abs(attn.maps[0].data - ref).max() < 1e-9

    def test_row_sums_one_minus_lambda(self, rng):
        for wfda_enabled in (True, False):
            for _ in range(20):
                p = make_params(rng, heads=2, wfda_enabled=wfda_enabled)
                lam = sfda.effective_lambda(p).item()
                x = rng.standard_normal((16, C))
                xl = rng.standard_normal((16, C))
                x_map = T.Tensor(rng.standard_normal((C, 4, 4)))
                attn = sfda.diff_attention(T.Tensor(x), T.Tensor(xl), x_map, p)
                for m in attn.maps:
                    assert np.abs(m.data.sum(axis=1) - (1.0 - lam)).max() < 1e-6

    def test_perfect_cancellation(self, rng):
        p = make_params(rng, wfda_enabled=False)
        tie_streams(p)
        set_lambda(p, np.log(3.0), np.log(2.0))  # lambda clamps to exactly 1
        x = rng.standard_normal((5, C))
        attn = sfda.diff_attention(T.Tensor(x), T.Tensor(x), None, p)
        assert np.abs(attn.maps[0].data).max() < 1e-12

    def test_matches_literal_head_oracle(self, rng):
        p = make_params(rng, heads=2)
        x = rng.standard_normal((16, C))
        xl = rng.standard_normal((16, C))
        x_map_arr = rng.standard_normal((C, 4, 4))
        attn = sfda.diff_attention(T.Tensor(x), T.Tensor(xl), T.Tensor(x_map_arr), p)
        lam = sfda.effective_lambda(p).item()
        for i in range(2):
            wq = {b: p.slots["h%d.w%sq" % (i, b)].data for b in ("hh", "hl", "lh", "ll")}
            wk = {b: p.slots["h%d.w%sk" % (i, b)].data for b in ("hh", "hl", "lh", "ll")}
            ref = np_diff_attention_head(
                x, xl, p.slots["h%d.wq" % i].data, p.slots["h%d.wlq" % i].data,
                p.slots["h%d.wk" % i].data, p.slots["h%d.wlk" % i].data,
                lam, p.head_dim, wfda_map=np_wfda(x_map_arr, wq, wk, p.head_dim))
            assert np.abs(attn.maps[i].data - ref).max() < 1e-9


def multi_head_oracle(x, xl, x_map_arr, p):
    # literal aggregation of per-head outputs
    lam = (np.exp(p.slots["lam_q1"].data @ p.slots["lam_k1"].data)
           - np.exp(p.slots["lam_q2"].data @ p.slots["lam_k2"].data)
           + p.lambda_init)
    lam = min(max(lam, 0.0), 1.0)
    xn = np_rms(x)
    heads = []
    for i in range(p.heads):
        if p.wfda_enabled:
            wq = {b: p.slots["h%d.w%sq" % (i, b)].data for b in ("hh", "hl", "lh", "ll")}
            wk = {b: p.slots["h%d.w%sk" % (i, b)].data for b in ("hh", "hl", "lh", "ll")}
            wmap = np_wfda(x_map_arr, wq, wk, p.head_dim)
        else:
            wmap = None
        a = np_diff_attention_head(
            x, xl, p.slots["h%d.wq" % i].data, p.slots["h%d.wlq" % i].data,
            p.slots["h%d.wk" % i].data, p.slots["h%d.wlk" % i].data,
            lam, p.head_dim, wfda_map=wmap)
        head = a @ (xn @ p.slots["h%d.wv" % i].data)
        heads.append((1.0 - p.lambda_init) * np_rms(head))
    return np.concatenate(heads, axis=1) @ p.slots["w_o"].data


class TestMultiHead:
    def test_single_head_shape(self, rng):
        p = make_params(rng, heads=1)
        x = T.Tensor(rng.standard_normal((4, C)))
        xl = T.Tensor(rng.standard_normal((4, C)))
        x_map = T.Tensor(rng.standard_normal((C, 2, 2)))
        out = sfda.multi_head_diff_attention(x, xl, x_map, p)
        assert out.shape == (4, C)

    def test_zero_values_zero_output(self, rng):
        p = make_params(rng, heads=2)
        for i in range(2):
            p.slots["h%d.wv" % i] = T.Tensor(np.zeros((C, D)), grad_enabled=True)
        x = T.Tensor(rng.standard_normal((16, C)))
        xl = T.Tensor(rng.standard_normal((16, C)))
        x_map = T.Tensor(rng.standard_normal((C, 4, 4)))
        out = sfda.multi_head_diff_attention(x, xl, x_map, p)
        assert np.abs(out.data).max() < 1e-12

    def test_matches_literal_equation_oracle(self, rng):
        p = make_params(rng, heads=2)
        x = rng.standard_normal((4, C))
        xl = rng.standard_normal((4, C))
        x_map_arr = rng.standard_normal((C, 2, 2))
        out = sfda.multi_head_diff_attention(
            T.Tensor(x), T.Tensor(xl), T.Tensor(x_map_arr), p)
        assert np.abs(out.data - multi_head_oracle(x, xl, x_map_arr, p)).max() < 1e-9


class TestBlock:
    def test_zero_gain_is_identity(self, rng):
        p = make_params(rng, heads=2)
        p.lambda_d = 0.0
        x = T.Tensor(rng.standard_normal((16, C)))
        xl = T.Tensor(rng.standard_normal((16, C)))
        x_map = T.Tensor(rng.standard_normal((C, 4, 4)))
        f, _ = sfda.sfda_block(x, xl, x_map, p)
        assert np.array_equal(f.data, x.data)

    def test_output_shape(self, rng):
        p = make_params(rng, heads=2)
        x = T.Tensor(rng.standard_normal((16, C)))
        xl = T.Tensor(rng.standard_normal((16, C)))
        x_map = T.Tensor(rng.standard_normal((C, 4, 4)))
        f, attn = sfda.sfda_block(x, xl, x_map, p)
        assert f.shape == x.shape
        assert attn.heads == 2 and attn.tokens == 16

    def test_matches_literal_equation_oracle(self, rng):
        p = make_params(rng, heads=1)
        assert p.lambda_d == 2.0
        x = rng.standard_normal((4, C))
        xl = rng.standard_normal((4, C))
        x_map_arr = rng.standard_normal((C, 2, 2))
        f, _ = sfda.sfda_block(T.Tensor(x), T.Tensor(xl), T.Tensor(x_map_arr), p)
        mh = multi_head_oracle(x, xl, x_map_arr, p)
        f1 = x + 2.0 * mh
        hidden = np_gelu(np_rms(f1) @ p.slots["ffn.w1"].data + p.slots["ffn.b1"].data)
        ref = f1 + 2.0 * (hidden @ p.slots["ffn.w2"].data + p.slots["ffn.b2"].data)
        assert np.abs(f.data - ref).max() < 1e-9

    def test_permutation_equivariance_without_wavelet_term(self, rng):
        p = make_params(rng, heads=2, wfda_enabled=False)
        x = rng.standard_normal((8, C))
        xl = rng.standard_normal((8, C))
        perm = rng.permutation(8)
        f1, _ = sfda.sfda_block(T.Tensor(x), T.Tensor(xl), None, p)
        f2, _ = sfda.sfda_block(T.Tensor(x[perm]), T.Tensor(xl[perm]), None, p)
        assert np.abs(f1.data[perm] - f2.data).max() < 1e-12


class TestGradients:
    def test_block_finite_differences_all_params(self, rng):
        p = make_params(rng, heads=2)
        x = T.Tensor(rng.standard_normal((16, C)), grad_enabled=True)
        xl = T.Tensor(rng.standard_normal((16, C)), grad_enabled=True)
        x_map_arr = T.Tensor(rng.standard_normal((C, 4, 4)))
        probe = T.Tensor(rng.standard_normal((16, C)))
        lam = sfda.effective_lambda(p).item()
        assert 0.0 < lam < 1.0  # interior so the clamp passes gradients
        names = sorted(p.slots)
        tensors = [p.slots[n] for n in names]

        def loss(xv, xlv, *slot_values):
            clone = sfda.DiffAttnParams(
                heads=p.heads, head_dim=p.head_dim, channels=p.channels,
                lambda_init=p.lambda_init, lambda_d=p.lambda_d,
                wfda_enabled=p.wfda_enabled,
                slots=dict(zip(names, slot_values)))
            f, _ = sfda.sfda_block(xv, xlv, x_map_arr, clone)
            return T.tsum(f * probe)

        err = max_rel_error(loss, [x, xl] + tensors, rng, samples=3)
        assert err <= 1e-4
