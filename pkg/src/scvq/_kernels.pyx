# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: channels-last patch extraction and nearest-code search.

Accumulation order in every kernel mirrors ``_kernels_py`` so that both backends
produce bit-identical results.
"""

import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy, memset

ctypedef fused real:
    float
    double


def _im2col(real[:, :, :, ::1] x, int kh, int kw, int stride, int pad,
            real[:, ::1] out):
    cdef Py_ssize_t N = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t n, ho, wo, ki, kj, row, col, y, xx
    cdef size_t run = C * sizeof(real)
    with nogil:
        for n in range(N):
            for ho in range(Ho):
                for wo in range(Wo):
                    row = (n * Ho + ho) * Wo + wo
                    col = 0
                    for ki in range(kh):
                        y = ho * stride + ki - pad
                        for kj in range(kw):
                            xx = wo * stride + kj - pad
                            if 0 <= y < H and 0 <= xx < W:
                                memcpy(&out[row, col], &x[n, y, xx, 0], run)
                            else:
                                memset(&out[row, col], 0, run)
                            col = col + C


def im2col(x, int kh, int kw, int stride, int pad):
    """(N, H, W, C) -> (N*Ho*Wo, kh*kw*C), columns ordered (ki, kj, c)."""
    x = np.ascontiguousarray(x)
    N, H, W, C = x.shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    out = np.empty((N * Ho * Wo, kh * kw * C), dtype=x.dtype)
    _im2col(x, kh, kw, stride, pad, out)
    return out


def _col2im(real[:, ::1] cols, int kh, int kw, int stride, int pad,
            real[:, :, :, ::1] out):
    # out is the padded image buffer, zero-initialised by the caller
    cdef Py_ssize_t N = out.shape[0], Hp = out.shape[1], Wp = out.shape[2], C = out.shape[3]
    cdef Py_ssize_t Ho = (Hp - kh) // stride + 1
    cdef Py_ssize_t Wo = (Wp - kw) // stride + 1
    cdef Py_ssize_t n, ho, wo, ki, kj, c, row, col
    cdef real* dst
    cdef real* src
    with nogil:
        # rows in (ho, wo) order: each output element receives its terms in
        # descending kernel-offset order; the numpy path loops offsets in reverse
        for n in range(N):
            for ho in range(Ho):
                for wo in range(Wo):
                    row = (n * Ho + ho) * Wo + wo
                    col = 0
                    for ki in range(kh):
                        for kj in range(kw):
                            dst = &out[n, ho * stride + ki, wo * stride + kj, 0]
                            src = &cols[row, col]
                            for c in range(C):
                                dst[c] = dst[c] + src[c]
                            col = col + C


def col2im(cols, shape, int kh, int kw, int stride, int pad):
    """Adjoint of :func:`im2col`; ``shape`` is the unpadded (N, H, W, C)."""
    cols = np.ascontiguousarray(cols)
    N, H, W, C = shape
    buf = np.zeros((N, H + 2 * pad, W + 2 * pad, C), dtype=cols.dtype)
    _col2im(cols, kh, kw, stride, pad, buf)
    if pad:
        return np.ascontiguousarray(buf[:, pad:pad + H, pad:pad + W, :])
    return buf


def _nearest(real[:, ::1] z, real[:, ::1] codes, cnp.int64_t[::1] idx, real[::1] best):
    cdef Py_ssize_t M = z.shape[0], L = codes.shape[0], q = z.shape[1]
    cdef Py_ssize_t i, k, j
    cdef real d, diff
    with nogil:
        for i in range(M):
            for k in range(L):
                d = 0
                for j in range(q):
                    diff = z[i, j] - codes[k, j]
                    d = d + diff * diff
                # strict comparison keeps the lowest index on ties
                if k == 0 or d < best[i]:
                    best[i] = d
                    idx[i] = k


def nearest_code(z, codes):
    """Index of (and squared distance to) the nearest row of ``codes`` for each row of ``z``."""
    z = np.ascontiguousarray(z)
    codes = np.ascontiguousarray(codes, dtype=z.dtype)
    M = z.shape[0]
    idx = np.empty(M, dtype=np.int64)
    best = np.empty(M, dtype=z.dtype)
    _nearest(z, codes, idx, best)
    return idx, best
