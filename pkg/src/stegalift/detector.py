"""Server-side analysis network and the training-only auxiliary branch.

A small convolutional encoder stands in for a large pretrained backbone;
its feature map is low-pass decomposed, lifted by differential attention,
mean-pooled and classified by a logistic head. The auxiliary branch runs
the same encoder/decomposition on raw secret images with its own attention
parameters (no wavelet term) and its own head.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import lfad, sfda
from .errors import ContractError, DimensionError
from .hider import ImageBatch
from .tensor import (Tensor, avgpool2x, batch_item, clamp, concat, conv2d_3x3,
                     gelu, log, matmul, pad_to_even, sigmoid, tmean,
                     tokens_from_map, tsum)

VARIANTS = ("full", "no-dwt", "direct-lfad", "hfad")
CLS_EPS = 1e-7
MIN_IMAGE_SIDE = 8
STEM_GAIN = 6.0  # detail-sensitive first layer: zero-DC filters need headroom


@dataclass
class DetectorConfig:
    """Structural hyperparameters of the analysis network."""

    image_channels: int = 1
    image_size: int = 32
    width: int = 16
    heads: int = 2
    head_dim: int = 0  # 0 -> width // heads
    lambda_init: float = 0.8
    lambda_d: float = 2.0
    variant: str = "full"
    paper_head_rule: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError("unknown variant %r (valid: %s)"
                                % (self.variant, ", ".join(VARIANTS)))

    def resolved_heads(self):
        d = self.head_dim or self.width // max(self.heads, 1)
        if d < 1:
            raise ContractError("head_dim resolves to zero")
        if self.paper_head_rule:
            side = self.image_size // 4
            side += side % 2
            h = max(1, (side * side) // (2 * d))
        else:
            h = self.heads
        return h, d


class DetectorParams:
    """Weight container: encoder + filter predictor + both attention branches."""

    def __init__(self, cfg, slots, sfda_params, da_params):
        self.cfg = cfg
        self.slots = slots
        self.sfda = sfda_params
        self.da = da_params

    def slot(self, name):
        from .lowrank import effective

        return effective(self.slots[name])

    def all_slots(self):
        merged = dict(self.slots)
        for name, v in self.sfda.slots.items():
            merged["sfda." + name] = v
        for name, v in self.da.slots.items():
            merged["da." + name] = v
        return merged

    def set_slot(self, name, value):
        if name.startswith("sfda."):
            self.sfda.slots[name[5:]] = value
        elif name.startswith("da."):
            self.da.slots[name[3:]] = value
        else:
            self.slots[name] = value

    # parameter groups used by the staged training schedule
    def names_lifting(self):
        """Feature-lifting network: filter predictor plus stego attention.

        The encoder backbone feeds the lifting network but is not part of
        it; it trains with the full analysis network, never alone.
        """
        names = [n for n in self.slots if n.startswith("lfad.")]
        names += ["sfda." + n for n in self.sfda.slots]
        return names

    def names_m(self):
        names = [n for n in self.slots if n.startswith("enc.")]
        return names + self.names_lifting() + ["head_m.w", "head_m.b"]

    def names_m_prime(self):
        return ["da." + n for n in self.da.slots] + ["head_mp.w", "head_mp.b"]

    def projection_slot_names(self):
        """Low-rank decomposition candidates: attention projections + main head."""
        names = ["sfda." + n for n in self.sfda.projection_names()]
        names += ["da." + n for n in self.da.projection_names()]
        names.append("head_m.w")
        return names


def init_detector(rng, cfg):
    """Normal-initialized detector parameters for the given structure.

    The first conv layer uses zero-DC (per-filter mean-subtracted) filters
    with a fixed gain so the stem responds to fine detail rather than
    luminance; forgery cues live in high-frequency content while smooth
    cover semantics dominate the DC band.
    """
    c = cfg.width
    heads, head_dim = cfg.resolved_heads()

    def conv_init(cout, cin):
        scale = 1.0 / math.sqrt(9 * cin)
        return Tensor(rng.standard_normal((cout, cin, 3, 3)) * scale,
                      grad_enabled=True)

    def stem_init(cout, cin):
        w = rng.standard_normal((cout, cin, 3, 3)) / math.sqrt(9 * cin)
        w -= w.mean(axis=(2, 3), keepdims=True)
        return Tensor(w * STEM_GAIN, grad_enabled=True)

    slots = {
        "enc.w1": stem_init(c, cfg.image_channels),
        "enc.w2": conv_init(c, c),
        "enc.w3": conv_init(c, c),
        "lfad.w": conv_init(lfad.KERNEL_TAPS, c),
        "head_m.w": Tensor(np.zeros((c, 1)), grad_enabled=True),
        "head_m.b": Tensor(np.zeros((1, 1)), grad_enabled=True),
        "head_mp.w": Tensor(np.zeros((c, 1)), grad_enabled=True),
        "head_mp.b": Tensor(np.zeros((1, 1)), grad_enabled=True),
    }
    sfda_params = sfda.init_diff_attn(
        rng, c, heads, head_dim, lambda_init=cfg.lambda_init,
        lambda_d=cfg.lambda_d, wfda_enabled=cfg.variant == "full")
    da_params = sfda.init_diff_attn(
        rng, c, heads, head_dim, lambda_init=cfg.lambda_init,
        lambda_d=cfg.lambda_d, wfda_enabled=False)
    return DetectorParams(cfg, slots, sfda_params, da_params)


def encode(x, p):
    """Three conv stages with two 2x downsamples: (B,Cin,H,W) -> (B,C,H/4,W/4)."""
    data = x.data if isinstance(x, ImageBatch) else x
    if data.ndim != 4:
        raise DimensionError("encoder expects (B,C,H,W)", data.shape)
    if min(data.shape[2], data.shape[3]) < MIN_IMAGE_SIDE:
        raise ContractError("image too small for two downsamples (min side %d)"
                            % MIN_IMAGE_SIDE)
    h = avgpool2x(gelu(conv2d_3x3(data, p.slot("enc.w1"))))
    h = avgpool2x(gelu(conv2d_3x3(h, p.slot("enc.w2"))))
    return gelu(conv2d_3x3(h, p.slot("enc.w3")))


def _lift_with(x, p, attn_params, variant):
    feats = pad_to_even(encode(x, p))
    bank = lfad.predict_lowpass_filters(feats, p.slot("lfad.w"))
    if variant == "hfad":
        bank = lfad.invert_to_highpass(bank)
    filtered = lfad.apply_filters(feats, bank)
    n = feats.shape[0]
    if variant in ("direct-lfad", "hfad"):
        fs = [tokens_from_map(batch_item(filtered, i)) for i in range(n)]
        return fs, [None] * n
    fs, attns = [], []
    for i in range(n):
        fmap = batch_item(feats, i)
        f, attn = sfda.sfda_block(tokens_from_map(fmap),
                                  tokens_from_map(batch_item(filtered, i)),
                                  fmap, attn_params)
        fs.append(f)
        attns.append(attn)
    return fs, attns


def lift(x_stego, p, variant=None):
    """Stego branch: per-item lifted features and attention maps."""
    variant = variant or p.cfg.variant
    return _lift_with(x_stego, p, p.sfda, variant)


def lift_secret(x_secret, p, variant=None):
    """Raw-secret branch: same pipeline, own attention params, no wavelet term."""
    variant = variant or p.cfg.variant
    if variant == "full":
        variant = "no-dwt"  # the auxiliary branch never uses the wavelet term
    return _lift_with(x_secret, p, p.da, variant)


def classify(f, head_w, head_b):
    """Mean-pool tokens, affine map, logistic sigmoid -> (1,1) probability."""
    pooled = tmean(f, axis=0, keepdims=True)
    return sigmoid(matmul(pooled, head_w) + head_b)


def classify_batch(fs, head_w, head_b):
    """Batched classify: list of (T,C) features -> (B,1) probabilities."""
    pooled = concat([tmean(f, axis=0, keepdims=True) for f in fs], axis=0)
    return sigmoid(matmul(pooled, head_w) + head_b)


def cls_loss(y_hat, y_hat_prime, labels):
    """Summed binary cross-entropy of both heads, averaged over the batch."""
    labels = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ContractError("labels must be 0 or 1")
    if y_hat.shape != labels.shape or y_hat_prime.shape != labels.shape:
        raise DimensionError("prediction/label batch sizes differ",
                             y_hat.shape, y_hat_prime.shape, labels.shape)
    y = Tensor(labels)
    total = None
    for pred in (y_hat, y_hat_prime):
        prob = clamp(pred, CLS_EPS, 1.0 - CLS_EPS)
        term = y * log(prob) + (1.0 - y) * log(1.0 - prob)
        total = term if total is None else total + term
    return tsum(total) * (-1.0 / labels.shape[0])
