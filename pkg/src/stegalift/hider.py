"""Toy wavelet-band image hider with a pluggable interface.

The secret (centered at 0.5 and downsampled to sub-band resolution) is
added into selected detail bands of the cover's Haar decomposition, scaled
by an embedding strength and per-band gains. Anything mapping
(secret, cover) -> stego with matching shapes and differentiable output can
replace it behind the same call signature.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tensor, avgpool2x, clamp, upsample2x
from .wavelet import SubBands, dwt_haar, idwt_haar

EMBED_BANDS = ("lh", "hl", "hh")  # never ll: cover semantics live there

ROLE_COVER = "cover"
ROLE_SECRET = "secret"
ROLE_STEGO = "stego"


@dataclass
class ImageBatch:
    """(B,C,H,W) images in [0,1] with even spatial dims."""

    data: Tensor
    role: str

    def __post_init__(self):
        if not isinstance(self.data, Tensor):
            self.data = Tensor(np.asarray(self.data, dtype=np.float64))
        if self.data.ndim != 4:
            raise DimensionError("image batch must be (B,C,H,W)", self.data.shape)
        h, w = self.data.shape[2:]
        if h % 2 or w % 2:
            raise ContractError("image batch needs even H and W")
        lo, hi = float(self.data.data.min()), float(self.data.data.max())
        if lo < -1e-9 or hi > 1 + 1e-9:
            raise ContractError(
                "image values must lie in [0,1], got [%g, %g]" % (lo, hi))

    @property
    def shape(self):
        return self.data.shape


@dataclass
class HiderConfig:
    """Embedding strength and the detail bands receiving payload."""

    alpha: float = 0.1
    bands: tuple = EMBED_BANDS

    def __post_init__(self):
        self.bands = tuple(self.bands)
        if self.alpha <= 0:
            raise ContractError("alpha must be positive")
        if not self.bands:
            raise ContractError("at least one embedding band required")
        bad = set(self.bands) - set(EMBED_BANDS)
        if bad:
            raise ContractError("unknown embedding bands %s" % sorted(bad))


@dataclass
class HiderParams:
    """Trainable strength/gain scalars fine-tuned in the joint stage."""

    alpha: Tensor
    gains: dict

    @classmethod
    def from_config(cls, cfg):
        return cls(alpha=Tensor(cfg.alpha, grad_enabled=True),
                   gains={b: Tensor(1.0, grad_enabled=True) for b in cfg.bands})

    def slots(self):
        out = {"hider.alpha": self.alpha}
        for b, g in self.gains.items():
            out["hider.gain_%s" % b] = g
        return out

    def load_slots(self, slots):
        self.alpha = slots["hider.alpha"]
        for b in list(self.gains):
            self.gains[b] = slots["hider.gain_%s" % b]


def _check_pair(a, b, role_a, role_b):
    if a.role != role_a or b.role != role_b:
        raise ContractError("expected roles (%s, %s), got (%s, %s)"
                            % (role_a, role_b, a.role, b.role))
    if a.shape != b.shape:
        raise DimensionError("image batches must match", a.shape, b.shape)


def hide(secret, cover, cfg, params=None):
    """Embed ``secret`` into ``cover``'s detail bands; returns the stego batch."""
    _check_pair(secret, cover, ROLE_SECRET, ROLE_COVER)
    payload = avgpool2x(secret.data - 0.5)
    bands = dwt_haar(cover.data)
    updated = {k: getattr(bands, k) for k in ("ll", "lh", "hl", "hh")}
    for band in cfg.bands:
        if params is not None:
            strength = params.alpha * params.gains[band]
        else:
            strength = cfg.alpha
        updated[band] = updated[band] + strength * payload
    stego = clamp(idwt_haar(SubBands(source_shape=bands.source_shape, **updated)), 0.0, 1.0)
    return ImageBatch(data=stego, role=ROLE_STEGO)


def extract_payload(stego, cover, cfg, params=None):
    """Downsampled secret estimate recovered from band differences."""
    _check_pair(stego, cover, ROLE_STEGO, ROLE_COVER)
    bs = dwt_haar(stego.data)
    bc = dwt_haar(cover.data)
    est = None
    for band in cfg.bands:
        strength = cfg.alpha if params is None else float(params.alpha.item())
        if params is not None:
            strength *= float(params.gains[band].item())
        if strength == 0:
            raise ContractError("cannot invert a zero embedding strength")
        diff = (getattr(bs, band) - getattr(bc, band)) * (1.0 / strength)
        est = diff if est is None else est + diff
    return est * (1.0 / len(cfg.bands)) + 0.5


def reveal(stego, cover, cfg, params=None):
    """Upsampled secret estimate; exact up to clamping losses."""
    est = extract_payload(stego, cover, cfg, params)
    return ImageBatch(data=clamp(upsample2x(est), 0.0, 1.0), role=ROLE_SECRET)
