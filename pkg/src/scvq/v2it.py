"""Vector-to-index transformer: corrupted feature map -> codebook index logits.

Nine pre-norm self-attention blocks over the flattened m*n grid, learned
positional embeddings, full bidirectional attention.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from scvq.nn import LayerNorm, Linear, Module, Parameter
from scvq.tensor import Tensor, ops
from scvq.tensor.core import as_tensor, default_dtype, make_node

N_BLOCKS = 9


@dataclass(frozen=True)
class V2ITConfig:
    seq_len: int = 16
    q: int = 32
    codebook_size: int = 128
    d_model: int = 64
    heads: int = 4
    mlp_ratio: int = 2
    n_blocks: int = N_BLOCKS
    # "feature": second loss term matches projected hidden states to z_c.
    # "literal": ||z_hat - sg(z_c)||^2 on the channel output (constant in the params).
    feature_target: str = "feature"

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    def validate(self) -> None:
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by {self.heads} heads")
        if self.n_blocks != N_BLOCKS:
            raise ValueError(f"the transformer has exactly {N_BLOCKS} blocks")
        if self.feature_target not in ("feature", "literal"):
            raise ValueError(f"unknown feature_target {self.feature_target!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class Attention(Module):
    def __init__(self, d, heads, rng):
        self.heads = heads
        self.qkv = Linear(d, 3 * d, rng, std=0.02)
        self.proj = Linear(d, d, rng, std=0.02)

    def __call__(self, x: Tensor, probs_out: list | None = None) -> Tensor:
        B, S, d = x.shape
        h = self.heads
        dh = d // h
        # (3, B, heads, S, head_dim)
        qkv = self.qkv(x).reshape(B, S, 3, h, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = _select(qkv, 0), _select(qkv, 1), _select(qkv, 2)
        scores = ops.matmul(q, ops.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
        att = ops.softmax(scores)
        if probs_out is not None:
            probs_out.append(att.data)
        out = ops.matmul(att, v).transpose(0, 2, 1, 3).reshape(B, S, d)
        return self.proj(out)


def _select(t: Tensor, i: int) -> Tensor:
    """Differentiable ``t[i]`` along the first axis."""
    shape = t.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[i] = g
        return (full,)

    return make_node(t.data[i], (t,), bw)


class Block(Module):
    def __init__(self, d, heads, mlp_ratio, rng):
        self.ln1 = LayerNorm(d)
        self.attn = Attention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.fc1 = Linear(d, d * mlp_ratio, rng, std=0.02)
        self.fc2 = Linear(d * mlp_ratio, d, rng, std=0.02)

    def __call__(self, x: Tensor, probs_out=None) -> Tensor:
        x = x + self.attn(self.ln1(x), probs_out)
        return x + self.fc2(ops.gelu(self.fc1(self.ln2(x))))


class V2ITParams(Module):
    def __init__(self, config: V2ITConfig, rng: np.random.Generator):
        d = config.d_model
        self.config = config
        self.embed = Linear(config.q, d, rng)
        self.pos = Parameter(rng.standard_normal((config.seq_len, d)) * 0.02)
        self.blocks = [Block(d, config.heads, config.mlp_ratio, rng) for _ in range(config.n_blocks)]
        self.ln_f = LayerNorm(d)
        self.head = Linear(d, config.codebook_size, rng, std=0.02)
        # maps pre-head hidden states back to q dims for the feature-matching term
        self.feat_proj = Linear(d, config.q, rng, std=0.02)

    @property
    def block_count(self) -> int:
        return len(self.blocks)


def build_transformer(config: V2ITConfig = V2ITConfig(), seed: int = 0, dtype=None) -> V2ITParams:
    config.validate()
    rng = np.random.default_rng(seed)
    with default_dtype(dtype or np.float64):
        return V2ITParams(config, rng)


def _as_sequence(z_hat, params: V2ITParams) -> Tensor:
    z = as_tensor(z_hat, dtype=params.pos.dtype)
    cfg = params.config
    if z.ndim == 4:
        z = z.reshape(z.shape[0], z.shape[1] * z.shape[2], z.shape[3])
    if z.ndim != 3 or z.shape[1] != cfg.seq_len or z.shape[2] != cfg.q:
        raise ValueError(
            f"sequence length/width mismatch: got {z.shape}, model expects (B, {cfg.seq_len}, {cfg.q})")
    return z


def forward(z_hat, params: V2ITParams, attention_out: list | None = None):
    """Return (logits (B, S, L), features (B, S, d_model))."""
    x = params.embed(_as_sequence(z_hat, params)) + params.pos
    for blk in params.blocks:
        x = blk(x, attention_out)
    features = params.ln_f(x)
    return params.head(features), features


def argmax_lowest(logits: np.ndarray) -> np.ndarray:
    """Per-row argmax; numpy returns the first (lowest) index on ties."""
    return np.argmax(logits, axis=-1).astype(np.int64)


def predict_indices(z_hat, params: V2ITParams, attention_out: list | None = None):
    """Return (logits, features, s_hat) with ``s_hat`` shaped like the input grid."""
    grid_shape = None
    shape = np.shape(z_hat.data if isinstance(z_hat, Tensor) else z_hat)
    if len(shape) == 4:
        grid_shape = shape[:3]
    logits, features = forward(z_hat, params, attention_out)
    s_hat = argmax_lowest(logits.data)
    if grid_shape is not None:
        s_hat = s_hat.reshape(grid_shape)
    return logits, features, s_hat


def stage2_loss(logits: Tensor, features: Tensor, s, z_c, lam: float = 0.5, proj=None,
                feature_target: str = "feature", z_hat=None) -> Tensor:
    """lam * sum_positions CE(logits, s) + ||proj(features) - sg(z_c)||^2.

    Per-image sums, averaged over the batch. ``proj`` is a callable mapping
    (B, S, d) to (B, S, q); pass ``params.feat_proj``. With
    ``feature_target="literal"`` the second term uses the channel output
    ``z_hat`` instead and carries no gradient.
    """
    s = np.asarray(s)
    B, S, L = logits.shape
    s = s.reshape(B, S)
    if s.size and s.max() >= L:
        raise IndexError(f"target index {s.max()} >= codebook size {L}")
    target = ops.stop_gradient(as_tensor(z_c, dtype=logits.dtype))
    target = target.reshape(B, S, -1)
    ce = ops.sum(ops.cross_entropy(logits, s))
    if feature_target == "literal":
        if z_hat is None:
            raise ValueError("literal feature target needs z_hat")
        zh = as_tensor(z_hat, dtype=logits.dtype).reshape(B, S, -1)
        feat = ops.sum(ops.square(ops.stop_gradient(zh) - target))
    else:
        proj = proj if proj is not None else (lambda f: f)
        pred = proj(features)
        if pred.shape != target.shape:
            raise ValueError(f"projected features {pred.shape} vs target {target.shape}")
        feat = ops.sum(ops.square(pred - target))
    return (ce * lam + feat) * (1.0 / B)
