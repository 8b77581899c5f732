"""Numpy implementations of the spatial hot kernels.

All functions take C-contiguous float64 arrays with an explicit batch axis:
images/features are (B, C, H, W), conv weights are (O, C, 3, 3) and
per-location filter banks are (B, 9, H, W) with the 9 taps in row-major
offset order ((-1,-1), (-1,0), ..., (1,1)).

Boundary handling is symmetric (edge-inclusive mirror) padding of width 1,
so for 3x3 windows the border reuses the edge pixel itself.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND_NAME = "python"


def _pad_sym1(x):
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="symmetric")


def _fold_sym1(gp):
    # Adjoint of width-1 symmetric padding on the last two axes.
    h = gp.shape[2] - 2
    w = gp.shape[3] - 2
    g = gp[:, :, 1 : h + 1, 1 : w + 1].copy()
    g[:, :, 0, :] += gp[:, :, 0, 1 : w + 1]
    g[:, :, h - 1, :] += gp[:, :, h + 1, 1 : w + 1]
    g[:, :, :, 0] += gp[:, :, 1 : h + 1, 0]
    g[:, :, :, w - 1] += gp[:, :, 1 : h + 1, w + 1]
    g[:, :, 0, 0] += gp[:, :, 0, 0]
    g[:, :, 0, w - 1] += gp[:, :, 0, w + 1]
    g[:, :, h - 1, 0] += gp[:, :, h + 1, 0]
    g[:, :, h - 1, w - 1] += gp[:, :, h + 1, w + 1]
    return g


def conv3x3_fwd(x, w):
    """Same-size 3x3 convolution: (B,C,H,W), (O,C,3,3) -> (B,O,H,W)."""
    win = sliding_window_view(_pad_sym1(x), (3, 3), axis=(2, 3))
    return np.einsum("bcijpq,ocpq->boij", win, w, optimize=True)


def conv3x3_bwd(x, w, gy):
    """Gradients of conv3x3_fwd w.r.t. x and w."""
    xp = _pad_sym1(x)
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))
    gw = np.einsum("boij,bcijpq->ocpq", gy, win, optimize=True)
    gwin = np.einsum("boij,ocpq->bcijpq", gy, w, optimize=True)
    h, wd = x.shape[2], x.shape[3]
    gxp = np.zeros_like(xp)
    for p in range(3):
        for q in range(3):
            gxp[:, :, p : p + h, q : q + wd] += gwin[:, :, :, :, p, q]
    return _fold_sym1(gxp), gw


def filter3x3_fwd(x, wts):
    """Per-location 3x3 filtering: (B,C,H,W), (B,9,H,W) -> (B,C,H,W)."""
    win = sliding_window_view(_pad_sym1(x), (3, 3), axis=(2, 3))
    win9 = win.reshape(win.shape[:4] + (9,))
    return np.einsum("bcijk,bkij->bcij", win9, wts, optimize=True)


def filter3x3_bwd(x, wts, gy):
    """Gradients of filter3x3_fwd w.r.t. x and the filter bank."""
    xp = _pad_sym1(x)
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))
    win9 = win.reshape(win.shape[:4] + (9,))
    gwts = np.einsum("bcij,bcijk->bkij", gy, win9, optimize=True)
    h, wd = x.shape[2], x.shape[3]
    gxp = np.zeros_like(xp)
    for k in range(9):
        p, q = divmod(k, 3)
        gxp[:, :, p : p + h, q : q + wd] += gy * wts[:, k][:, None]
    return _fold_sym1(gxp), gwts
