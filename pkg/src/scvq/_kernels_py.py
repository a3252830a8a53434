"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures, same accumulation order, bit-identical output.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kh, kw, stride, pad):
    x = np.ascontiguousarray(x)
    N, H, W, C = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    Ho, Wo = win.shape[1], win.shape[2]
    # (N, Ho, Wo, C, kh, kw) -> rows (n, ho, wo), columns (ki, kj, c)
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(N * Ho * Wo, kh * kw * C)


def col2im(cols, shape, kh, kw, stride, pad):
    N, H, W, C = shape
    Hp, Wp = H + 2 * pad, W + 2 * pad
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    blocks = np.ascontiguousarray(cols).reshape(N, Ho, Wo, kh, kw, C)
    buf = np.zeros((N, Hp, Wp, C), dtype=cols.dtype)
    # reverse offset order matches the compiled kernel's per-element summation
    for ki in reversed(range(kh)):
        for kj in reversed(range(kw)):
            buf[:, ki:ki + stride * Ho:stride, kj:kj + stride * Wo:stride, :] += \
                blocks[:, :, :, ki, kj, :]
    if pad:
        return np.ascontiguousarray(buf[:, pad:pad + H, pad:pad + W, :])
    return buf


def nearest_code(z, codes):
    z = np.ascontiguousarray(z)
    codes = np.ascontiguousarray(codes, dtype=z.dtype)
    dist = np.zeros((z.shape[0], codes.shape[0]), dtype=z.dtype)
    # sequential sum over the vector axis, matching the compiled loop
    for j in range(z.shape[1]):
        diff = z[:, j, None] - codes[None, :, j]
        dist += diff * diff
    idx = np.argmin(dist, axis=1).astype(np.int64)
    return idx, dist[np.arange(z.shape[0]), idx]
