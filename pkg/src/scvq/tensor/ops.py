"""Differentiable primitives.

Each function computes its forward value with numpy and attaches the adjoint
as a closure via :func:`make_node`. Broadcasting follows numpy rules; the
adjoints reduce back to the operand shapes.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from scvq import kernels
from scvq.tensor.core import Tensor, make_node

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic ----------------------------------------------

def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make_node(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make_node(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return make_node(ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * ad / (bd * bd), bd.shape) if b.requires_grad else None,
        )

    return make_node(ad / bd, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return make_node(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    if p == 2:
        return make_node(ad * ad, (a,), lambda g: (2.0 * ad * g,))
    return make_node(ad ** p, (a,), lambda g: (p * ad ** (p - 1) * g,))


def square(a: Tensor) -> Tensor:
    return power(a, 2)


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    ad = a.data
    return make_node(np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    if np.any(ad <= 0):
        raise FloatingPointError("log of non-positive value")
    return make_node(np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: (g * (1.0 - out * out),))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    ad = a.data
    pos = ad > 0
    # max(x, slope * x) equals the leaky ReLU exactly for 0 < slope < 1
    out = np.maximum(ad, ad * slope) if 0 < slope < 1 else np.where(pos, ad, ad * slope)
    return make_node(out, (a,), lambda g: (np.where(pos, g, g * slope),))


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    ad = a.data
    cdf = 0.5 * (1.0 + erf(ad * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * ad * ad)
    return make_node(ad * cdf, (a,), lambda g: (g * (cdf + ad * pdf),))


def softplus(a: Tensor) -> Tensor:
    ad = a.data
    out = np.logaddexp(0.0, ad)
    sig = 0.5 * (1.0 + np.tanh(0.5 * ad))
    return make_node(out.astype(ad.dtype), (a,), lambda g: (g * sig,))


def stop_gradient(a: Tensor) -> Tensor:
    """Identity forward; blocks the adjoint."""
    return Tensor(a.data)


# -- reductions and shape ------------------------------------------------

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make_node(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([shape[i] for i in axes]))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape),)

    return make_node(np.asarray(a.data.mean(axis=axis, keepdims=keepdims)), (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return make_node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return make_node(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def concat(tensors, axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def gather_rows(table: Tensor, idx) -> Tensor:
    """Embedding gather: ``table[idx]`` along the first axis."""
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"index out of range for table with {table.shape[0]} rows")

    def bw(g):
        out = np.zeros_like(table.data)
        np.add.at(out, idx.reshape(-1), g.reshape(-1, *table.shape[1:]))
        return (out,)

    return make_node(table.data[idx], (table,), bw)


# -- linear algebra ------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if ad.ndim > 2 and bd.ndim == 2:
                # fold batch axes: one large GEMM instead of a batched one
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return make_node(ad @ bd, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` with ``w`` shaped (in, out)."""
    y = matmul(x, w)
    return add(y, b) if b is not None else y


# -- convolution ---------------------------------------------------------

def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation, channels-last.

    ``x`` is (N, H, W, C), ``w`` is (kh, kw, C, O), output (N, Ho, Wo, O).
    """
    N, H, W, C = x.shape
    kh, kw, Cw, O = w.shape
    if C != Cw:
        raise ValueError(f"conv2d channel mismatch: input {C}, weight {Cw}")
    Ho, Wo = _out_size(H, kh, stride, pad), _out_size(W, kw, stride, pad)
    cols = kernels.im2col(x.data, kh, kw, stride, pad)
    w2 = w.data.reshape(-1, O)
    y = cols @ w2
    if b is not None:
        y += b.data
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.reshape(-1, O)
        gx = gw = None
        if x.requires_grad:
            gx = kernels.col2im(g2 @ w2.T, (N, H, W, C), kh, kw, stride, pad)
        if w.requires_grad:
            gw = (cols.T @ g2).reshape(w.shape)
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_node(y.reshape(N, Ho, Wo, O), parents, bw)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
                     pad: int = 0) -> Tensor:
    """Transposed convolution (adjoint of :func:`conv2d`), channels-last.

    ``x`` is (N, H, W, C), ``w`` is (C, kh, kw, O).
    """
    N, H, W, C = x.shape
    Cw, kh, kw, O = w.shape
    if C != Cw:
        raise ValueError(f"conv_transpose2d channel mismatch: input {C}, weight {Cw}")
    Ho = (H - 1) * stride - 2 * pad + kh
    Wo = (W - 1) * stride - 2 * pad + kw
    x2 = x.data.reshape(-1, C)
    w2 = w.data.reshape(C, -1)
    out = kernels.col2im(x2 @ w2, (N, Ho, Wo, O), kh, kw, stride, pad)
    if b is not None:
        out += b.data
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gcols = kernels.im2col(g, kh, kw, stride, pad)
        gx = gw = None
        if x.requires_grad:
            gx = (gcols @ w2.T).reshape(N, H, W, C)
        if w.requires_grad:
            gw = (x2.T @ gcols).reshape(w.shape)
        if b is None:
            return gx, gw
        return gx, gw, g.reshape(-1, O).sum(axis=0)

    return make_node(out, parents, bw)


# -- normalisation -------------------------------------------------------

def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Group normalisation over channels-last input (N, H, W, C)."""
    N, H, W, C = x.shape
    if C % groups:
        raise ValueError(f"{C} channels not divisible into {groups} groups")
    cg = C // groups
    count = H * W * cg

    def group_mean(a):
        # reduce space first (contiguous), then the channels of each group
        per_channel = a.sum(axis=1)
        per_group = per_channel.reshape(N, groups, cg).sum(axis=-1) / count
        return np.repeat(per_group, cg, axis=1)[:, None, :]

    xd = x.data.reshape(N, H * W, C)
    xc = xd - group_mean(xd)
    inv = 1.0 / np.sqrt(group_mean(xc * xc) + eps)
    xhat = xc * inv
    out = (xhat * gamma.data + beta.data).reshape(N, H, W, C)

    def bw(g):
        g = g.reshape(N, H * W, C)
        ggamma = (g * xhat).sum(axis=(0, 1))
        gbeta = g.sum(axis=(0, 1))
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - group_mean(gh) - xhat * group_mean(gh * xhat))
            gx = gx.reshape(N, H, W, C)
        return gx, ggamma, gbeta

    return make_node(out, (x, gamma, beta), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead)
        gbeta = g.sum(axis=lead)
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return make_node(out, (x, gamma, beta), bw)


# -- softmax family ------------------------------------------------------

def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return make_node(p, (a,), bw)


def log_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return make_node(out, (a,), bw)


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Per-position cross-entropy with integer targets, shape ``logits.shape[:-1]``."""
    target = np.asarray(target)
    L = logits.shape[-1]
    if target.shape != logits.shape[:-1]:
        raise ValueError(f"target shape {target.shape} vs logits {logits.shape}")
    if target.size and (target.min() < 0 or target.max() >= L):
        raise IndexError(f"target index outside [0, {L})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, target[..., None], axis=-1)[..., 0]

    def bw(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, target[..., None],
                          np.take_along_axis(grad, target[..., None], axis=-1) - 1.0, axis=-1)
        return (grad * g[..., None],)

    return make_node(-picked, (logits,), bw)
