"""Differential attention over a feature stream and its low-pass companion.

Each head subtracts a softmax attention computed from low-pass features
(scaled by a learnable lambda) from one computed on the raw stream, and
optionally adds a wavelet term: the four Haar sub-bands are projected and
attended at half resolution, combined with signs (+hh +hl -lh -ll), and the
resulting quarter-size map is lifted to full token resolution by parent
indexing, which keeps its rows summing to zero. Head outputs are
RMS-normalized, scaled by (1 - lambda_init), concatenated and projected;
the block wraps this in scaled residuals with a feed-forward sub-block.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError
from .lowrank import effective
from .tensor import (Tensor, clamp, concat, exp, gelu, matmul, mul,
                     rms_normalize, softmax_rows, tokens_from_map,
                     transpose2d, tsum)
from .wavelet import dwt_haar

BAND_KEYS = ("hh", "hl", "lh", "ll")
BAND_SIGNS = (1.0, 1.0, -1.0, -1.0)


@dataclass
class DiffAttnParams:
    """All weights of one differential-attention layer.

    ``slots`` maps weight names (e.g. ``h0.wq``, ``w_o``, ``lam_q1``,
    ``ffn.w1``) to tensors, or to low-rank splits once fine-tuning
    decomposes them.
    """

    heads: int
    head_dim: int
    channels: int
    lambda_init: float = 0.8
    lambda_d: float = 2.0
    wfda_enabled: bool = True
    slots: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.lambda_init < 1.0:
            raise ContractError("lambda_init must lie in (0, 1)")

    def mat(self, name):
        return effective(self.slots[name])

    def projection_names(self):
        """Slot names of the projection matrices (low-rank candidates)."""
        names = []
        for i in range(self.heads):
            for base in ("wq", "wlq", "wk", "wlk", "wv"):
                names.append("h%d.%s" % (i, base))
            if self.wfda_enabled:
                for band in BAND_KEYS:
                    names.append("h%d.w%sq" % (i, band))
                    names.append("h%d.w%sk" % (i, band))
        names.append("w_o")
        return names


def init_diff_attn(rng, channels, heads, head_dim=None, lambda_init=0.8,
                   lambda_d=2.0, wfda_enabled=True):
    """Normal-initialized DiffAttnParams; head_dim defaults to C // heads."""
    if head_dim is None:
        if channels % heads:
            raise ContractError("channels must divide evenly across heads")
        head_dim = channels // heads
    p = DiffAttnParams(heads=heads, head_dim=head_dim, channels=channels,
                       lambda_init=lambda_init, lambda_d=lambda_d,
                       wfda_enabled=wfda_enabled)
    c, d = channels, head_dim
    proj_scale = 1.0 / math.sqrt(c)

    def mk(shape, scale):
        return Tensor(rng.standard_normal(shape) * scale, grad_enabled=True)

    for i in range(heads):
        for base in ("wq", "wlq", "wk", "wlk", "wv"):
            p.slots["h%d.%s" % (i, base)] = mk((c, d), proj_scale)
        if wfda_enabled:
            for band in BAND_KEYS:
                p.slots["h%d.w%sq" % (i, band)] = mk((c, d), proj_scale)
                p.slots["h%d.w%sk" % (i, band)] = mk((c, d), proj_scale)
    p.slots["w_o"] = mk((heads * d, c), 1.0 / math.sqrt(heads * d))
    for name in ("lam_q1", "lam_k1", "lam_q2", "lam_k2"):
        p.slots[name] = mk((d,), 0.1)
    hidden = 4 * c
    p.slots["ffn.w1"] = mk((c, hidden), proj_scale)
    p.slots["ffn.b1"] = Tensor(np.zeros((hidden,)), grad_enabled=True)
    p.slots["ffn.w2"] = mk((hidden, c), 1.0 / math.sqrt(hidden))
    p.slots["ffn.b2"] = Tensor(np.zeros((c,)), grad_enabled=True)
    return p


@dataclass
class AttentionMap:
    """Per-head token-by-token attention matrices for one image.

    ``maps`` holds the full per-head maps; ``maps_plain`` the same maps
    without the wavelet term (identical objects when that term is off).
    """

    maps: list
    maps_plain: list

    @property
    def heads(self):
        return len(self.maps)

    @property
    def tokens(self):
        return self.maps[0].shape[0]

    def as_array(self, include_wfda=True):
        maps = self.maps if include_wfda else self.maps_plain
        return np.stack([m.data for m in maps])


def effective_lambda(p):
    """Re-parameterized differential weight, clamped to [0, 1]."""
    lam = (exp(tsum(mul(p.mat("lam_q1"), p.mat("lam_k1"))))
           - exp(tsum(mul(p.mat("lam_q2"), p.mat("lam_k2"))))
           + p.lambda_init)
    return clamp(lam, 0.0, 1.0)


def project_qkv(x, x_low, p):
    """Project the RMS-normalized streams into per-head Q1,Q2,K1,K2,V."""
    if x.shape != x_low.shape:
        raise DimensionError("streams must share token layout", x.shape, x_low.shape)
    if x.shape[1] != p.channels:
        raise DimensionError("token width differs from layer channels",
                             x.shape, (p.channels,))
    xn = rms_normalize(x)
    ln = rms_normalize(x_low)
    q1, q2, k1, k2, v = [], [], [], [], []
    for i in range(p.heads):
        q1.append(matmul(xn, p.mat("h%d.wq" % i)))
        q2.append(matmul(ln, p.mat("h%d.wlq" % i)))
        k1.append(matmul(xn, p.mat("h%d.wk" % i)))
        k2.append(matmul(ln, p.mat("h%d.wlk" % i)))
        v.append(matmul(xn, p.mat("h%d.wv" % i)))
    return q1, q2, k1, k2, v


_PARENT_CACHE = {}


def _parent_matrix(h, w):
    """0/1 map from fine tokens (h*w) to coarse tokens (h/2 * w/2)."""
    key = (h, w)
    got = _PARENT_CACHE.get(key)
    if got is None:
        t, t4 = h * w, (h // 2) * (w // 2)
        m = np.zeros((t, t4))
        for i in range(h):
            for j in range(w):
                m[i * w + j, (i // 2) * (w // 2) + (j // 2)] = 1.0
        got = Tensor(m)
        _PARENT_CACHE[key] = got
    return got


def wfda(x_map, p):
    """Wavelet frequency-differential term: per-head (T,T) zero-row-sum maps."""
    if not p.wfda_enabled:
        raise ContractError("wfda called on a layer with the wavelet term disabled")
    c, h, w = x_map.shape
    if h % 2 or w % 2:
        raise DimensionError("wfda needs even spatial dims", x_map.shape)
    bands = dwt_haar(x_map)
    band_tokens = {k: tokens_from_map(b)
                   for k, b in zip(("ll", "lh", "hl", "hh"), bands.bands())}
    scale = 1.0 / math.sqrt(p.head_dim)
    parent = _parent_matrix(h, w)
    parent_t = transpose2d(parent)
    out = []
    for i in range(p.heads):
        coarse = None
        for band, sign in zip(BAND_KEYS, BAND_SIGNS):
            q = matmul(band_tokens[band], p.mat("h%d.w%sq" % (i, band)))
            k = matmul(band_tokens[band], p.mat("h%d.w%sk" % (i, band)))
            sm = softmax_rows(matmul(q, transpose2d(k)) * scale)
            term = sm * sign
            coarse = term if coarse is None else coarse + term
        out.append(matmul(matmul(parent, coarse), parent_t))
    return out


def _attention_internals(x, x_low, x_map, p):
    q1, q2, k1, k2, v = project_qkv(x, x_low, p)
    lam = effective_lambda(p)
    scale = 1.0 / math.sqrt(p.head_dim)
    wave = wfda(x_map, p) if p.wfda_enabled else None
    plain, full = [], []
    for i in range(p.heads):
        a1 = softmax_rows(matmul(q1[i], transpose2d(k1[i])) * scale)
        a2 = softmax_rows(matmul(q2[i], transpose2d(k2[i])) * scale)
        base = a1 - lam * a2
        plain.append(base)
        full.append(base + wave[i] if wave is not None else base)
    return AttentionMap(maps=full, maps_plain=plain), v


def diff_attention(x, x_low, x_map, p):
    """Differential attention maps (with the wavelet term when enabled)."""
    attn, _ = _attention_internals(x, x_low, x_map, p)
    return attn


def _multi_head(x, x_low, x_map, p):
    attn, v = _attention_internals(x, x_low, x_map, p)
    heads = []
    for i in range(p.heads):
        head = matmul(attn.maps[i], v[i])
        heads.append(rms_normalize(head) * (1.0 - p.lambda_init))
    out = matmul(concat(heads, axis=1), p.mat("w_o"))
    return out, attn


def multi_head_diff_attention(x, x_low, x_map, p):
    """Aggregate normalized head outputs through the output projection."""
    out, _ = _multi_head(x, x_low, x_map, p)
    return out


def _ffn(x, p):
    hidden = gelu(matmul(x, p.mat("ffn.w1")) + p.mat("ffn.b1"))
    return matmul(hidden, p.mat("ffn.w2")) + p.mat("ffn.b2")


def sfda_block(x, x_low, x_map, p):
    """Full block: scaled attention residual then scaled feed-forward residual.

    Both deltas carry the lambda_d gain, so lambda_d = 0 reduces the block
    to the identity on ``x``. Returns (features, attention map).
    """
    mh, attn = _multi_head(x, x_low, x_map, p)
    f = x + p.lambda_d * mh
    f = f + p.lambda_d * _ffn(rms_normalize(f), p)
    return f, attn
