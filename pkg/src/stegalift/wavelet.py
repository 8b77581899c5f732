"""Single-level orthonormal Haar transform producing four sub-bands.

For every 2x2 block (a, b over c, d) the bands are
ll=(a+b+c+d)/2, lh=(a+b-c-d)/2, hl=(a-b+c-d)/2, hh=(a-b-c+d)/2.
The map is orthogonal, so it conserves energy, the inverse is exact, and
the adjoint used for differentiation is the inverse itself.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor import Tensor


@dataclass
class SubBands:
    """The four half-resolution bands of one feature map or image batch."""

    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor
    source_shape: tuple

    @property
    def band_shape(self):
        return self.ll.shape

    def bands(self):
        return (self.ll, self.lh, self.hl, self.hh)


def _corners(x):
    h, w = x.shape[-2], x.shape[-1]
    blocks = x.reshape(x.shape[:-2] + (h // 2, 2, w // 2, 2))
    return blocks[..., 0, :, 0], blocks[..., 0, :, 1], blocks[..., 1, :, 0], blocks[..., 1, :, 1]


def _forward_arrays(x):
    a, b, c, d = _corners(x)
    return ((a + b + c + d) / 2, (a + b - c - d) / 2,
            (a - b + c - d) / 2, (a - b - c + d) / 2)


def _inverse_arrays(ll, lh, hl, hh):
    a = (ll + lh + hl + hh) / 2
    b = (ll + lh - hl - hh) / 2
    c = (ll - lh + hl - hh) / 2
    d = (ll - lh - hl + hh) / 2
    h2, w2 = ll.shape[-2], ll.shape[-1]
    out = np.empty(ll.shape[:-2] + (h2, 2, w2, 2))
    out[..., 0, :, 0] = a
    out[..., 0, :, 1] = b
    out[..., 1, :, 0] = c
    out[..., 1, :, 1] = d
    return out.reshape(ll.shape[:-2] + (2 * h2, 2 * w2))


def dwt_haar(x):
    """Decompose (C,H,W) or (B,C,H,W) into four half-size sub-bands.

    H and W must be even; pad with edge replication first otherwise.
    """
    h, w = x.shape[-2], x.shape[-1]
    if h % 2 or w % 2:
        raise DimensionError(
            "dwt_haar needs even spatial dims; pad to even first", x.shape)
    ll_a, lh_a, hl_a, hh_a = _forward_arrays(x.data)

    def make(arr, idx):
        def vjp(g):
            grads = [np.zeros_like(arr)] * 4
            grads[idx] = g
            return (_inverse_arrays(*grads),)

        return Tensor._result(arr, (x,), vjp, "dwt_haar")

    return SubBands(
        ll=make(ll_a, 0), lh=make(lh_a, 1), hl=make(hl_a, 2), hh=make(hh_a, 3),
        source_shape=tuple(x.shape))


def idwt_haar(b):
    """Exact inverse of :func:`dwt_haar`."""
    shapes = {t.shape for t in b.bands()}
    if len(shapes) != 1:
        raise DimensionError("sub-bands disagree in shape", *sorted(shapes))

    def vjp(g):
        return _forward_arrays(g)

    arr = _inverse_arrays(b.ll.data, b.lh.data, b.hl.data, b.hh.data)
    return Tensor._result(arr, b.bands(), vjp, "idwt_haar")


def band_energy(x):
    """Fraction of signal energy in the detail (lh+hl+hh) bands."""
    bands = dwt_haar(x)
    detail = sum(float((t.data ** 2).sum()) for t in (bands.lh, bands.hl, bands.hh))
    total = float((x.data ** 2).sum())
    return detail / total if total > 0 else 0.0
