"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from scvq.tensor.core import Tensor, backward


def numerical_grad(f, x: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``x.data``."""
    grad = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f().data)
        flat[i] = orig - eps
        fm = float(f().data)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"f not evaluable at component {i} +/- {eps}")
        g[i] = (fp - fm) / (2.0 * eps)
    return grad


def grad_check(f, x: Tensor, eps: float = 1e-5, others=()) -> float:
    """Max relative error between the analytic and central-difference gradient.

    ``f`` takes no arguments and builds its graph from ``x`` (and any other
    leaves it closes over; list those in ``others`` so their stale gradients
    are cleared). Error per component is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if not 0 < eps <= 1e-2:
        raise ValueError("eps must lie in (0, 1e-2]")
    if not x.data.flags.writeable or not x.data.flags.c_contiguous:
        x.data = np.array(x.data, copy=True)
    x.requires_grad = True
    for t in (x, *others):
        t.grad = None
    out = f()
    backward(out)
    analytic = np.zeros_like(x.data, dtype=np.float64) if x.grad is None else x.grad.astype(np.float64)
    for t in (x, *others):
        t.grad = None
    numeric = numerical_grad(f, x, eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
