"""Dense float64 tensors with recorded reverse-mode differentiation.

A :class:`Tensor` wraps an immutable numpy array. Operations on tensors
whose ``grad_enabled`` flag is set record their inputs and a vector-Jacobian
callback on the output node; :func:`gradient_of` replays those records in
reverse topological order to produce exact gradients. Every public operation
verifies that its result is finite.

Only the operations needed by the pipeline are provided; there is no
general broadcasting beyond what those operations use internally.
"""

import numpy as np

from . import backend
from .errors import ContractError, DimensionError, NumericError

_EPS_RMS = 1e-6


def _check_finite(arr, op):
    # single-pass reduce: any NaN/Inf poisons the sum
    if not np.isfinite(arr.sum()):
        raise NumericError("non-finite values produced by %s" % op)


class Tensor:
    """Immutable dense array, optionally participating in differentiation."""

    __slots__ = ("data", "grad_enabled", "_parents", "_vjp", "_op")

    def __init__(self, data, grad_enabled=False):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "Tensor()")
        arr.flags.writeable = False
        self.data = arr
        self.grad_enabled = bool(grad_enabled)
        self._parents = ()
        self._vjp = None
        self._op = "leaf"

    @classmethod
    def _result(cls, arr, parents, vjp, op):
        # Internal node constructor; takes ownership of arr.
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        _check_finite(arr, op)
        arr.flags.writeable = False
        out = cls.__new__(cls)
        out.data = arr
        out.grad_enabled = any(p.grad_enabled for p in parents)
        if out.grad_enabled:
            out._parents = tuple(parents)
            out._vjp = vjp
        else:
            out._parents = ()
            out._vjp = None
        out._op = op
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        if self.data.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def numpy(self):
        """Read-only view of the underlying array."""
        return self.data

    def __repr__(self):
        return "Tensor(shape=%s, grad=%s, op=%s)" % (
            tuple(self.shape), self.grad_enabled, self._op)

    # Arithmetic sugar; scalars are wrapped as constant tensors.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad, shape):
    # Sum grad down to `shape` after numpy broadcasting.
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / arithmetic


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    return Tensor._result(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    return Tensor._result(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    return Tensor._result(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul")


def neg(a):
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a):
    with np.errstate(over="ignore"):  # overflow surfaces as a NumericError
        out_data = np.exp(a.data)
    return Tensor._result(out_data, (a,), lambda g: (g * out_data,), "exp")


def log(a):
    if np.any(a.data <= 0.0):
        raise ContractError("log requires strictly positive input")
    return Tensor._result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sigmoid(a):
    out_data = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor._result(
        out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),), "sigmoid")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a):
    """Smooth gating nonlinearity (tanh form)."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + 0.044715 * x * x2))
    # derivative assembled in forward; backward is one multiply
    deriv = 0.5 * (1.0 + t) + (0.5 * _GELU_C) * x * (1.0 - t * t) * (1.0 + 0.134145 * x2)
    return Tensor._result(0.5 * x * (1.0 + t), (a,), lambda g: (g * deriv,), "gelu")


def clamp(a, lo, hi):
    """Clip values to [lo, hi]; gradient is zero where clipping is active."""
    mask = (a.data >= lo) & (a.data <= hi)
    return Tensor._result(
        np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,), "clamp")


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape):
    old = a.shape
    return Tensor._result(
        a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def permute(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._result(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "permute")


def transpose2d(a):
    if a.ndim != 2:
        raise DimensionError("transpose2d expects a matrix", a.shape)
    return permute(a, (1, 0))


def concat(parts, axis=0):
    parts = [_wrap(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return Tensor._result(
        np.concatenate([p.data for p in parts], axis=axis), tuple(parts), vjp, "concat")


def batch_item(a, i):
    """Select item i along the leading axis, dropping that axis."""
    i = int(i)

    def vjp(g):
        full = np.zeros(a.shape)
        full[i] = g
        return (full,)

    return Tensor._result(a.data[i], (a,), vjp, "batch_item")


# ---------------------------------------------------------------------------
# reductions and linear algebra


def tsum(a, axis=None, keepdims=False):
    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.shape).copy(),)

    return Tensor._result(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp, "sum")


def tmean(a, axis=None, keepdims=False):
    n = a.size if axis is None else a.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def matmul(a, b):
    """Matrix product of two 2-D tensors."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul expects matrices", a.shape, b.shape)
    if a.shape[1] != b.shape[0]:
        raise DimensionError("matmul inner dimensions disagree", a.shape, b.shape)

    def vjp(g):
        return (g @ b.data.T, a.data.T @ g)

    return Tensor._result(a.data @ b.data, (a, b), vjp, "matmul")


def softmax(a, axis):
    """Numerically stable softmax along ``axis``."""
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return ((g - dot) * out_data,)

    return Tensor._result(out_data, (a,), vjp, "softmax")


def softmax_rows(a):
    """Row-wise softmax of a matrix; each output row sums to one."""
    if a.ndim != 2:
        raise DimensionError("softmax_rows expects a matrix", a.shape)
    return softmax(a, axis=1)


def rms_normalize(a, gain=None, eps=_EPS_RMS):
    """Divide each trailing-dimension slice by sqrt(mean(x^2) + eps)."""
    if a.shape[-1] < 1:
        raise DimensionError("rms_normalize needs a non-empty last axis", a.shape)
    x = a.data
    d = x.shape[-1]
    denom = np.sqrt((x * x).mean(axis=-1, keepdims=True) + eps)
    y = x / denom
    if gain is None:
        def vjp(g):
            dot = (g * x).sum(axis=-1, keepdims=True)
            return (g / denom - x * dot / (d * denom ** 3),)

        return Tensor._result(y, (a,), vjp, "rms_normalize")

    def vjp(g):
        gg = g * gain.data
        dot = (gg * x).sum(axis=-1, keepdims=True)
        gx = gg / denom - x * dot / (d * denom ** 3)
        ggain = (g * y).reshape(-1, d).sum(axis=0)
        return (gx, ggain)

    return Tensor._result(y * gain.data, (a, gain), vjp, "rms_normalize")


# ---------------------------------------------------------------------------
# spatial operations


def conv2d_3x3(x, w):
    """Same-size 3x3 convolution with symmetric boundary padding.

    ``x`` is (C,H,W) or (B,C,H,W); ``w`` is (Cout,C,3,3). The result keeps
    the spatial size of the input.
    """
    if w.ndim != 4 or w.shape[2:] != (3, 3):
        raise DimensionError("conv weights must be (Cout,C,3,3)", w.shape)
    squeeze = x.ndim == 3
    xb = x.data[None] if squeeze else x.data
    if xb.ndim != 4:
        raise DimensionError("conv input must be (C,H,W) or (B,C,H,W)", x.shape)
    if xb.shape[1] != w.shape[1]:
        raise DimensionError("conv channel mismatch", x.shape, w.shape)
    y = backend.conv3x3_fwd(xb, w.data)

    def vjp(g):
        gb = g[None] if squeeze else g
        gx, gw = backend.conv3x3_bwd(xb, w.data, np.ascontiguousarray(gb))
        return (gx[0] if squeeze else gx, gw)

    return Tensor._result(y[0] if squeeze else y, (x, w), vjp, "conv2d_3x3")


def local_filter_3x3(x, wts):
    """Apply per-location 3x3 kernels channel-wise with symmetric padding.

    ``x`` is (C,H,W) or (B,C,H,W); ``wts`` is (9,H,W) or (B,9,H,W) holding a
    flattened kernel per spatial location, taps in row-major offset order.
    """
    squeeze = x.ndim == 3
    xb = x.data[None] if squeeze else x.data
    wb = wts.data[None] if squeeze else wts.data
    if xb.ndim != 4 or wb.ndim != 4 or wb.shape[1] != 9:
        raise DimensionError("bad filter operands", x.shape, wts.shape)
    if xb.shape[0] != wb.shape[0] or xb.shape[2:] != wb.shape[2:]:
        raise DimensionError("filter bank does not match input", x.shape, wts.shape)
    y = backend.filter3x3_fwd(xb, wb)

    def vjp(g):
        gb = g[None] if squeeze else g
        gx, gw = backend.filter3x3_bwd(xb, wb, np.ascontiguousarray(gb))
        if squeeze:
            return (gx[0], gw[0])
        return (gx, gw)

    return Tensor._result(y[0] if squeeze else y, (x, wts), vjp, "local_filter_3x3")


def pad_to_even(a):
    """Replicate the last row/column so both trailing dims become even."""
    h, w = a.shape[-2], a.shape[-1]
    ph, pw = h % 2, w % 2
    if ph == 0 and pw == 0:
        return a
    pad = [(0, 0)] * (a.ndim - 2) + [(0, ph), (0, pw)]

    def vjp(g):
        core = g[..., :h, :w].copy()
        if ph:
            core[..., h - 1, :] += g[..., h, :w]
        if pw:
            core[..., :, w - 1] += g[..., :h, w]
        if ph and pw:
            core[..., h - 1, w - 1] += g[..., h, w]
        return (core,)

    return Tensor._result(np.pad(a.data, pad, mode="edge"), (a,), vjp, "pad_to_even")


def avgpool2x(a):
    """Average-pool 2x2 blocks of the trailing two axes (pads odd sizes)."""
    a = pad_to_even(a)
    h, w = a.shape[-2], a.shape[-1]
    lead = a.shape[:-2]
    blocks = a.data.reshape(lead + (h // 2, 2, w // 2, 2))
    y = blocks.mean(axis=(-3, -1))

    def vjp(g):
        g4 = np.repeat(np.repeat(g, 2, axis=-1), 2, axis=-2) * 0.25
        return (g4,)

    return Tensor._result(y, (a,), vjp, "avgpool2x")


def _bilinear_axis(n_out, n_in):
    # align_corners=False sampling positions for a 2x upsample
    coords = (np.arange(n_out) + 0.5) / 2.0 - 0.5
    i0 = np.clip(np.floor(coords).astype(int), 0, n_in - 1)
    i1 = np.clip(i0 + 1, 0, n_in - 1)
    frac = np.clip(coords - np.floor(coords), 0.0, 1.0)
    return i0, i1, 1.0 - frac, frac


def upsample2x(a):
    """Bilinear 2x upsampling of the trailing two axes."""
    h, w = a.shape[-2], a.shape[-1]
    r0, r1, rw0, rw1 = _bilinear_axis(2 * h, h)
    c0, c1, cw0, cw1 = _bilinear_axis(2 * w, w)
    x = a.data
    rows = x[..., r0, :] * rw0[:, None] + x[..., r1, :] * rw1[:, None]
    y = rows[..., :, c0] * cw0 + rows[..., :, c1] * cw1

    def vjp(g):
        # scatter-add through moveaxis views (np.add.at indexes axis 0)
        grows = np.zeros(x.shape[:-2] + (2 * h, w))
        gr_view = np.moveaxis(grows, -1, 0)
        np.add.at(gr_view, c0, np.moveaxis(g * cw0, -1, 0))
        np.add.at(gr_view, c1, np.moveaxis(g * cw1, -1, 0))
        gx = np.zeros(x.shape)
        gx_view = np.moveaxis(gx, -2, 0)
        np.add.at(gx_view, r0, np.moveaxis(grows * rw0[:, None], -2, 0))
        np.add.at(gx_view, r1, np.moveaxis(grows * rw1[:, None], -2, 0))
        return (gx,)

    return Tensor._result(y, (a,), vjp, "upsample2x")


def tokens_from_map(m):
    """Flatten a (C,H,W) feature map to (H*W, C) tokens."""
    if m.ndim != 3:
        raise DimensionError("tokens_from_map expects (C,H,W)", m.shape)
    c, h, w = m.shape
    return reshape(permute(m, (1, 2, 0)), (h * w, c))


# ---------------------------------------------------------------------------
# differentiation


class GradTape:
    """Backward replay over the graph reachable from one scalar loss.

    ``order`` holds the recorded operations in forward topological order;
    the backward sweep visits them strictly in reverse. ``grads`` maps
    tensor identity to the accumulated gradient array.
    """

    def __init__(self, loss):
        if loss.size != 1:
            raise ContractError("loss must be a scalar tensor")
        self.order = self._toposort(loss)
        self.grads = {id(loss): np.ones(loss.shape)}
        for node in reversed(self.order):
            if node._vjp is None:
                continue
            g = self.grads.get(id(node))
            if g is None:
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if not parent.grad_enabled:
                    continue
                acc = self.grads.get(id(parent))
                self.grads[id(parent)] = pg if acc is None else acc + pg

    @staticmethod
    def _toposort(root):
        order, seen = [], set()
        stack = [(root, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.grad_enabled and id(p) not in seen:
                    stack.append((p, False))
        return order

    def grad(self, t):
        """Gradient of the loss w.r.t. ``t`` (zeros if unreachable)."""
        g = self.grads.get(id(t))
        return Tensor(np.zeros(t.shape) if g is None else g)


def gradient_of(loss, params):
    """Exact reverse-mode gradients of a scalar loss for each parameter.

    Parameters not reachable from the loss get a zero gradient.
    """
    tape = GradTape(loss)
    return [tape.grad(p) for p in params]


# ---------------------------------------------------------------------------
# initialization helpers


def randn(rng, shape, scale=1.0, grad_enabled=True):
    """Normal-initialized parameter tensor."""
    return Tensor(rng.standard_normal(shape) * scale, grad_enabled=grad_enabled)


def zeros(shape, grad_enabled=True):
    return Tensor(np.zeros(shape), grad_enabled=grad_enabled)
