# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled spatial hot kernels (3x3 conv and per-location filtering).

Same contracts as ``_kernels_py``: float64 C-contiguous arrays, batch axis
first, width-1 symmetric (edge-mirroring) boundary handling. Inputs may be
read-only; inner loops run over branch-free contiguous spans so the
compiler can vectorize them.
"""

from libc.stdlib cimport free, malloc

import numpy as np

BACKEND_NAME = "cython"


cdef inline Py_ssize_t _mirror(Py_ssize_t i, Py_ssize_t n) nogil:
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


def conv3x3_fwd(x, w):
    cdef const double[:, :, :, ::1] xv = x
    cdef const double[:, :, :, ::1] wv = w
    cdef Py_ssize_t nb = xv.shape[0], nc = xv.shape[1], nh = xv.shape[2], nw = xv.shape[3]
    cdef Py_ssize_t no = wv.shape[0]
    y = np.zeros((nb, no, nh, nw))
    cdef double[:, :, :, ::1] yv = y
    cdef Py_ssize_t b, o, c, p, i, j, ii
    cdef double c0, c1, c2
    cdef double* buf = <double*> malloc(nw * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    with nogil:
        for b in range(nb):
            for o in range(no):
                for i in range(nh):
                    for j in range(nw):
                        buf[j] = 0.0
                    for c in range(nc):
                        for p in range(3):
                            ii = _mirror(i + p - 1, nh)
                            c0 = wv[o, c, p, 0]
                            c1 = wv[o, c, p, 1]
                            c2 = wv[o, c, p, 2]
                            buf[0] += c0 * xv[b, c, ii, 0]
                            buf[nw - 1] += c2 * xv[b, c, ii, nw - 1]
                            for j in range(nw):
                                buf[j] += c1 * xv[b, c, ii, j]
                            for j in range(1, nw):
                                buf[j] += c0 * xv[b, c, ii, j - 1]
                            for j in range(nw - 1):
                                buf[j] += c2 * xv[b, c, ii, j + 1]
                    for j in range(nw):
                        yv[b, o, i, j] = buf[j]
    free(buf)
    return y


def conv3x3_bwd(x, w, gy):
    cdef const double[:, :, :, ::1] xv = x
    cdef const double[:, :, :, ::1] wv = w
    cdef const double[:, :, :, ::1] gyv = gy
    cdef Py_ssize_t nb = xv.shape[0], nc = xv.shape[1], nh = xv.shape[2], nw = xv.shape[3]
    cdef Py_ssize_t no = wv.shape[0]
    gx = np.zeros((nb, nc, nh, nw))
    gw = np.zeros((no, nc, 3, 3))
    cdef double[:, :, :, ::1] gxv = gx
    cdef double[:, :, :, ::1] gwv = gw
    cdef Py_ssize_t b, o, c, p, i, j, ii
    cdef double c0, c1, c2, a0, a1, a2, g
    with nogil:
        for b in range(nb):
            for o in range(no):
                for c in range(nc):
                    for p in range(3):
                        c0 = wv[o, c, p, 0]
                        c1 = wv[o, c, p, 1]
                        c2 = wv[o, c, p, 2]
                        a0 = 0.0
                        a1 = 0.0
                        a2 = 0.0
                        for i in range(nh):
                            ii = _mirror(i + p - 1, nh)
                            g = gyv[b, o, i, 0]
                            a0 += g * xv[b, c, ii, 0]
                            gxv[b, c, ii, 0] += g * c0
                            g = gyv[b, o, i, nw - 1]
                            a2 += g * xv[b, c, ii, nw - 1]
                            gxv[b, c, ii, nw - 1] += g * c2
                            for j in range(nw):
                                g = gyv[b, o, i, j]
                                a1 += g * xv[b, c, ii, j]
                                gxv[b, c, ii, j] += g * c1
                            for j in range(1, nw):
                                g = gyv[b, o, i, j]
                                a0 += g * xv[b, c, ii, j - 1]
                                gxv[b, c, ii, j - 1] += g * c0
                            for j in range(nw - 1):
                                g = gyv[b, o, i, j]
                                a2 += g * xv[b, c, ii, j + 1]
                                gxv[b, c, ii, j + 1] += g * c2
                        gwv[o, c, p, 0] += a0
                        gwv[o, c, p, 1] += a1
                        gwv[o, c, p, 2] += a2
    return gx, gw


def filter3x3_fwd(x, wts):
    cdef const double[:, :, :, ::1] xv = x
    cdef const double[:, :, :, ::1] wv = wts
    cdef Py_ssize_t nb = xv.shape[0], nc = xv.shape[1], nh = xv.shape[2], nw = xv.shape[3]
    y = np.zeros((nb, nc, nh, nw))
    cdef double[:, :, :, ::1] yv = y
    cdef Py_ssize_t b, c, k, p, q, i, j, ii, dq, j0, j1
    with nogil:
        for b in range(nb):
            for c in range(nc):
                for k in range(9):
                    p = k // 3
                    q = k - 3 * p
                    dq = q - 1
                    j0 = 1 if dq < 0 else 0
                    j1 = nw - 1 if dq > 0 else nw
                    for i in range(nh):
                        ii = _mirror(i + p - 1, nh)
                        if dq < 0:
                            yv[b, c, i, 0] += wv[b, k, i, 0] * xv[b, c, ii, 0]
                        elif dq > 0:
                            yv[b, c, i, nw - 1] += wv[b, k, i, nw - 1] * xv[b, c, ii, nw - 1]
                        for j in range(j0, j1):
                            yv[b, c, i, j] += wv[b, k, i, j] * xv[b, c, ii, j + dq]
    return y


def filter3x3_bwd(x, wts, gy):
    cdef const double[:, :, :, ::1] xv = x
    cdef const double[:, :, :, ::1] wv = wts
    cdef const double[:, :, :, ::1] gyv = gy
    cdef Py_ssize_t nb = xv.shape[0], nc = xv.shape[1], nh = xv.shape[2], nw = xv.shape[3]
    gx = np.zeros((nb, nc, nh, nw))
    gwts = np.zeros((nb, 9, nh, nw))
    cdef double[:, :, :, ::1] gxv = gx
    cdef double[:, :, :, ::1] gwv = gwts
    cdef Py_ssize_t b, c, k, p, q, i, j, ii, dq, j0, j1
    cdef double g
    with nogil:
        for b in range(nb):
            for c in range(nc):
                for k in range(9):
                    p = k // 3
                    q = k - 3 * p
                    dq = q - 1
                    j0 = 1 if dq < 0 else 0
                    j1 = nw - 1 if dq > 0 else nw
                    for i in range(nh):
                        ii = _mirror(i + p - 1, nh)
                        if dq < 0:
                            g = gyv[b, c, i, 0]
                            gwv[b, k, i, 0] += g * xv[b, c, ii, 0]
                            gxv[b, c, ii, 0] += g * wv[b, k, i, 0]
                        elif dq > 0:
                            g = gyv[b, c, i, nw - 1]
                            gwv[b, k, i, nw - 1] += g * xv[b, c, ii, nw - 1]
                            gxv[b, c, ii, nw - 1] += g * wv[b, k, i, nw - 1]
                        for j in range(j0, j1):
                            g = gyv[b, c, i, j]
                            gwv[b, k, i, j] += g * xv[b, c, ii, j + dq]
                            gxv[b, c, ii, j + dq] += g * wv[b, k, i, j]
    return gx, gwts
