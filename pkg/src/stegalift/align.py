"""Distances and losses aligning stego-domain features with raw-secret ones.

CORAL (second-moment) distance modulated by an exponential of the linear
MMD (mean shift) gives the domain distance; attention maps are aligned with
a squared Frobenius term or with the same composite distance. The enabled
terms and their metrics come from an :class:`AlignmentConfig`, with presets
matching the studied loss formulations.
"""

import warnings
from dataclasses import dataclass, replace

from .errors import ContractError, DimensionError
from .tensor import Tensor, clamp, concat, exp, matmul, tmean, transpose2d, tsum

EXP_CLAMP = 80.0  # cap on gamma * mmd before exponentiation

FA_METRICS = ("l2", "sda")
AA_METRICS = ("l2", "sda", "none")


@dataclass(frozen=True)
class AlignmentConfig:
    """Which alignment terms run and with which metric."""

    gamma: float = 10.0
    fa_metric: str = "sda"
    aa_metric: str = "l2"
    fa_enabled: bool = True
    aa_include_wfda: bool = True

    def __post_init__(self):
        if self.gamma <= 0:
            raise ContractError("gamma must be positive")
        if self.fa_metric not in FA_METRICS:
            raise ContractError("fa_metric must be one of %s" % (FA_METRICS,))
        if self.aa_metric not in AA_METRICS:
            raise ContractError("aa_metric must be one of %s" % (AA_METRICS,))

    @property
    def aa_enabled(self):
        return self.aa_metric != "none"

    @property
    def any_enabled(self):
        return self.fa_enabled or self.aa_enabled


# Loss formulations from the alignment ablation, by config-file name.
PRESETS = {
    "none": AlignmentConfig(fa_enabled=False, aa_metric="none"),
    "fa_l2": AlignmentConfig(fa_metric="l2", aa_metric="none"),
    "aa_sda": AlignmentConfig(fa_enabled=False, aa_metric="sda"),
    "fa_l2+aa_l2": AlignmentConfig(fa_metric="l2", aa_metric="l2"),
    "fa_sda+aa_sda": AlignmentConfig(fa_metric="sda", aa_metric="sda"),
    "fa_l2+aa_sda": AlignmentConfig(fa_metric="l2", aa_metric="sda"),
    "default": AlignmentConfig(),
}


def preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ContractError("unknown alignment preset %r (valid: %s)"
                            % (name, ", ".join(sorted(PRESETS)))) from None


def coral_distance(f_a, f_b):
    """Squared Frobenius distance between feature covariances / (4 C^2)."""
    if f_a.shape != f_b.shape:
        raise DimensionError("feature matrices must match", f_a.shape, f_b.shape)
    n, c = f_a.shape
    if n < 2:
        raise ContractError("coral needs at least two rows for a covariance")

    def cov(f):
        centered = f - tmean(f, axis=0, keepdims=True)
        return matmul(transpose2d(centered), centered) * (1.0 / (n - 1))

    diff = cov(f_a) - cov(f_b)
    return tsum(diff * diff) * (1.0 / (4.0 * c * c))


def mmd_distance(f_a, f_b):
    """Linear-kernel MMD: squared distance between feature row-means."""
    if f_a.shape[1] != f_b.shape[1]:
        raise DimensionError("feature widths must match", f_a.shape, f_b.shape)
    diff = tmean(f_a, axis=0) - tmean(f_b, axis=0)
    return tsum(diff * diff)


def sda_distance(f_stego, f_secret, cfg):
    """CORAL distance scaled by exp(gamma * MMD), overflow-clamped."""
    d_c = coral_distance(f_stego, f_secret)
    d_m = mmd_distance(f_stego, f_secret)
    expo = d_m * cfg.gamma
    if float(expo.data) > EXP_CLAMP:
        warnings.warn("sda_distance exponent clamped to %g" % EXP_CLAMP,
                      RuntimeWarning)
        expo = clamp(expo, -EXP_CLAMP, EXP_CLAMP)
    return d_c * exp(expo)


def _as_list(maps):
    return maps if isinstance(maps, (list, tuple)) else [maps]


def _stacked_heads(attn, include_wfda):
    maps = attn.maps if include_wfda else attn.maps_plain
    return concat(maps, axis=0) if len(maps) > 1 else maps[0]


def attention_alignment_loss(a_stego, a_secret, cfg):
    """Alignment of attention maps, summed over heads, averaged over items.

    Accepts a single map pair or same-length lists of per-item maps. The
    "sda" metric stacks each item's head maps into one row matrix and
    applies :func:`sda_distance` instead of the Frobenius term.
    """
    if not cfg.aa_enabled:
        raise ContractError("attention alignment is disabled in this config")
    stego, secret = _as_list(a_stego), _as_list(a_secret)
    if len(stego) != len(secret):
        raise DimensionError("batch sizes differ",
                             (len(stego),), (len(secret),))
    total = None
    for s, t in zip(stego, secret):
        if s.heads != t.heads or s.tokens != t.tokens:
            raise DimensionError("attention maps disagree in heads/tokens",
                                 (s.heads, s.tokens), (t.heads, t.tokens))
        if cfg.aa_metric == "l2":
            item = None
            for ms, mt in zip(
                    s.maps if cfg.aa_include_wfda else s.maps_plain,
                    t.maps if cfg.aa_include_wfda else t.maps_plain):
                d = ms - mt
                term = tsum(d * d)
                item = term if item is None else item + term
        else:
            item = sda_distance(_stacked_heads(s, cfg.aa_include_wfda),
                                _stacked_heads(t, cfg.aa_include_wfda), cfg)
        total = item if total is None else total + item
    return total * (1.0 / len(stego))


def feature_alignment_loss(f_stego, f_secret, cfg):
    """Feature-alignment term per the configured metric."""
    if not cfg.fa_enabled:
        raise ContractError("feature alignment is disabled in this config")
    if cfg.fa_metric == "sda":
        return sda_distance(f_stego, f_secret, cfg)
    if f_stego.shape != f_secret.shape:
        raise DimensionError("feature matrices must match",
                             f_stego.shape, f_secret.shape)
    d = f_stego - f_secret
    return tsum(d * d) * (1.0 / d.size)


def sda_loss(f_stego, f_secret, a_stego, a_secret, cfg):
    """Sum of the enabled feature- and attention-alignment terms."""
    if not cfg.any_enabled:
        raise ContractError("no alignment term enabled")
    total = None
    if cfg.fa_enabled:
        total = feature_alignment_loss(f_stego, f_secret, cfg)
    if cfg.aa_enabled:
        aa = attention_alignment_loss(a_stego, a_secret, cfg)
        total = aa if total is None else total + aa
    return total


def secret_branch_features(x_secret, detector_params, variant="full"):
    """Features and attention of the raw-secret branch (no wavelet term)."""
    from .detector import lift_secret

    return lift_secret(x_secret, detector_params, variant=variant)
