"""SVD split of weight matrices into a frozen top-rank part plus a
trainable residual.

``decompose`` keeps the largest singular directions in a frozen matrix and
leaves the remainder as the only trainable piece; ``recompose`` rebuilds the
effective weight so gradients reach the residual alone.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tensor


def svd(w):
    """Reduced SVD with singular values in non-increasing order.

    Returns (U, s, Vt) as tensors with U: n x k, s: k, Vt: k x m for
    k = min(n, m). Backed by LAPACK; reconstruction error is checked.
    """
    if w.ndim != 2:
        raise DimensionError("svd expects a matrix", w.shape)
    u, s, vt = np.linalg.svd(w.data, full_matrices=False)
    rec = (u * s) @ vt
    norm = np.linalg.norm(w.data)
    if np.linalg.norm(rec - w.data) > max(1e-8 * norm, 1e-12):
        raise ContractError("svd failed to reconstruct its input")
    return Tensor(u), Tensor(s), Tensor(vt)


@dataclass
class SplitWeight:
    """Frozen rank-r component plus trainable residual of one matrix."""

    w_r: Tensor
    delta: Tensor
    r: int
    residual_rank: int

    def effective(self):
        return self.w_r + self.delta


def decompose(w, residual_rank):
    """Split ``w`` so only the smallest ``residual_rank`` directions train."""
    if w.ndim != 2:
        raise DimensionError("decompose expects a matrix", w.shape)
    k = min(w.shape)
    residual_rank = int(residual_rank)
    if not 1 <= residual_rank < k:
        raise ContractError(
            "residual_rank must satisfy 1 <= residual_rank < min(n,m)=%d, got %d"
            % (k, residual_rank))
    r = k - residual_rank
    u, s, vt = np.linalg.svd(w.data, full_matrices=False)
    w_r = (u[:, :r] * s[:r]) @ vt[:r]
    delta = w.data - w_r
    return SplitWeight(
        w_r=Tensor(w_r, grad_enabled=False),
        delta=Tensor(delta, grad_enabled=True),
        r=r, residual_rank=residual_rank)


def recompose(split):
    """Effective weight w_r + delta; gradient flows only into delta."""
    return split.effective()


def effective(slot):
    """Tensor view of a parameter slot (plain tensor or split weight)."""
    return slot.effective() if isinstance(slot, SplitWeight) else slot


def trainable(slot):
    """The tensor an optimizer may update for this slot."""
    return slot.delta if isinstance(slot, SplitWeight) else slot


def desk_scale_residual_rank(shape, requested):
    """Cap the residual rank so the split stays valid for small matrices.

    Returns 0 when the matrix is too small to split at all.
    """
    k = min(shape)
    return min(int(requested), k // 2)
