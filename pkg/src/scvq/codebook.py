"""Shared codebook: nearest-neighbour quantisation, index lookup, VQ loss.

The codebook holds exactly ``L`` vectors addressed by indices ``0..L-1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from scvq import kernels
from scvq.nn import Module, Parameter
from scvq.tensor import Tensor, ops
from scvq.tensor.core import as_tensor, default_dtype, make_node


class Codebook(Module):
    def __init__(self, size: int, dim: int, seed: int = 0, dtype=None):
        if size < 2:
            raise ValueError(f"codebook needs at least 2 vectors, got {size}")
        rng = np.random.default_rng(seed)
        with default_dtype(dtype or np.float64):
            self.codebook = Parameter(rng.uniform(-1.0 / size, 1.0 / size, (size, dim)))

    @property
    def size(self) -> int:
        return self.codebook.shape[0]

    @property
    def dim(self) -> int:
        return self.codebook.shape[1]

    @property
    def vectors(self) -> Tensor:
        return self.codebook


def _table(codebook) -> Tensor:
    return codebook.codebook if isinstance(codebook, Codebook) else as_tensor(codebook)


def nearest_indices(z: np.ndarray, table: np.ndarray) -> np.ndarray:
    """argmin_k ||z - c_k||, lowest index on ties. ``z`` is (..., q)."""
    z = np.asarray(z)
    table = np.asarray(table)
    if table.shape[0] == 0:
        raise ValueError("empty codebook")
    if z.shape[-1] != table.shape[1]:
        raise ValueError(f"vector length {z.shape[-1]} != codebook dim {table.shape[1]}")
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("non-finite input to quantizer")
    flat = z.reshape(-1, z.shape[-1])
    idx, _ = kernels.nearest_code(flat, table.astype(flat.dtype, copy=False))
    return idx.reshape(z.shape[:-1])


def quantize(z, codebook) -> tuple[np.ndarray, Tensor]:
    """Map every vector of ``z`` to its nearest code.

    Returns the integer index grid ``s`` and ``z_c = lookup(s)``, which is
    differentiable with respect to the codebook (not to ``z``).
    """
    table = _table(codebook)
    zd = z.data if isinstance(z, Tensor) else np.asarray(z)
    s = nearest_indices(zd, table.data)
    return s, lookup(s, codebook)


def lookup(s, codebook) -> Tensor:
    """Gather code vectors for an index grid: ``out[..., :] = C[s[...]]``."""
    table = _table(codebook)
    s = np.asarray(s)
    if not np.issubdtype(s.dtype, np.integer):
        raise TypeError("index grid must be integer")
    return ops.gather_rows(table, s)


def straight_through(z_h: Tensor, z_c: Tensor) -> Tensor:
    """Forward value is exactly ``z_c``; the adjoint goes to ``z_h`` unchanged."""
    if z_h.shape != z_c.shape:
        raise ValueError(f"shape mismatch {z_h.shape} vs {z_c.shape}")
    return make_node(z_c.data.copy(), (z_h,), lambda g: (g,))


def _batch_count(z: Tensor) -> int:
    return z.shape[0] if z.ndim == 4 else 1


def vq_loss(z_h: Tensor, z_c: Tensor, beta: float = 0.25) -> Tensor:
    """||sg(z_h) - z_c||^2 + beta * ||z_h - sg(z_c)||^2.

    Squared norms are summed over the grid of each image and averaged over
    the batch axis when the input is (B, m, n, q).
    """
    if z_h.shape != z_c.shape:
        raise ValueError(f"shape mismatch {z_h.shape} vs {z_c.shape}")
    b = _batch_count(z_h)
    codebook_term = ops.sum(ops.square(ops.stop_gradient(z_h) - z_c))
    commit_term = ops.sum(ops.square(z_h - ops.stop_gradient(z_c)))
    return (codebook_term + beta * commit_term) * (1.0 / b)


def restart_dead_codes(codebook, usage, pool, rng: np.random.Generator,
                       jitter: float = 0.01) -> np.ndarray:
    """Re-seed codes with zero ``usage`` from vectors drawn out of ``pool``.

    ``pool`` is (N, q) recent encoder outputs. Draws are without replacement
    when the pool is large enough; a small Gaussian jitter (relative to the
    pool's std) keeps duplicated draws apart. Returns the restarted indices.
    """
    usage = np.asarray(usage)
    dead = np.flatnonzero(usage == 0)
    if dead.size == 0:
        return dead
    pool = np.asarray(pool, dtype=np.float64).reshape(-1, codebook.dim)
    pick = rng.choice(len(pool), dead.size, replace=dead.size > len(pool))
    scale = jitter * float(pool.std() or 1.0)
    fresh = pool[pick] + scale * rng.standard_normal((dead.size, codebook.dim))
    table = codebook.codebook.data
    table[dead] = fresh.astype(table.dtype)
    return dead


@dataclass
class CodebookStats:
    perplexity: float
    dead_codes: int
    used_codes: int
    histogram: np.ndarray


def usage_histogram(indices, size: int) -> np.ndarray:
    return np.bincount(np.asarray(indices).reshape(-1), minlength=size)


def codebook_stats(histogram) -> CodebookStats:
    """Perplexity exp(H(p)) of the empirical index distribution, and dead-code count."""
    hist = np.asarray(histogram, dtype=np.float64)
    total = hist.sum()
    if total <= 0:
        raise ValueError("no quantizations recorded")
    p = hist[hist > 0] / total
    entropy = float(-(p * np.log(p)).sum())
    used = int((hist > 0).sum())
    return CodebookStats(
        perplexity=float(np.exp(entropy)),
        dead_codes=int(hist.size - used),
        used_codes=used,
        histogram=hist.astype(np.int64),
    )
