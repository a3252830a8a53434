"""Channel models: real AWGN on feature maps and a BPSK bit channel for indices.

Note on naming: the grid width of a feature map is called ``grid``/``n_cols``
in this package; ``noise`` always means the additive Gaussian vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KINDS = ("awgn-feature", "bit-index", "noiseless")


@dataclass(frozen=True)
class ChannelConfig:
    kind: str = "awgn-feature"
    snr_db: float = 10.0
    seed: int = 0
    gray_code: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"channel kind must be one of {KINDS}, got {self.kind!r}")


def snr_to_sigma(z, snr_db: float) -> float:
    """Noise std for a target SNR relative to the empirical power of ``z``.

    sigma^2 = mean(z^2) * 10^(-snr_db / 10)
    """
    z = np.asarray(z, dtype=np.float64)
    power = float(np.mean(z * z))
    if power == 0.0:
        raise ValueError("SNR undefined for an all-zero transmission")
    return math.sqrt(power * 10.0 ** (-snr_db / 10.0))


def _per_image_sigma(z: np.ndarray, snr_db) -> np.ndarray:
    if z.ndim < 4:
        return np.asarray(snr_to_sigma(z, float(snr_db)))
    snr = np.broadcast_to(np.asarray(snr_db, dtype=np.float64), (z.shape[0],))
    sig = np.array([snr_to_sigma(z[i], snr[i]) for i in range(z.shape[0])])
    return sig.reshape(-1, *([1] * (z.ndim - 1)))


def awgn_transmit(z, cfg: ChannelConfig, rng: np.random.Generator | None = None,
                  snr_db=None) -> np.ndarray:
    """z_hat = z + noise, noise ~ N(0, sigma^2) i.i.d.

    A (B, m, n, q) input is normalised per image. ``snr_db`` may override the
    config with a scalar or per-image array; ``rng`` overrides the seed.
    """
    z = np.asarray(z)
    if cfg.kind == "noiseless":
        return z.copy()
    if cfg.kind != "awgn-feature":
        raise ValueError(f"awgn_transmit needs an awgn-feature channel, got {cfg.kind!r}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    sigma = _per_image_sigma(z, cfg.snr_db if snr_db is None else snr_db)
    noise = rng.standard_normal(z.shape) * sigma
    return (z + noise).astype(z.dtype)


def q_function(x: float) -> float:
    """Gaussian tail probability P(X > x), X ~ N(0, 1)."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def bit_error_prob(snr_db: float) -> float:
    """Hard-decision BPSK bit error rate Q(sqrt(2 * snr))."""
    if snr_db == -math.inf:
        return 0.5
    return q_function(math.sqrt(2.0 * 10.0 ** (snr_db / 10.0)))


def bits_per_index(size: int) -> int:
    if size < 2 or size & (size - 1):
        raise ValueError(f"codebook size must be a power of two, got {size}")
    return size.bit_length() - 1


def _to_gray(s):
    return s ^ (s >> 1)


def _from_gray(g, nbits):
    s = g.copy()
    shift = 1
    while shift < nbits:
        s ^= s >> shift
        shift <<= 1
    return s


def flip_bits(s, size: int, flips, gray_code: bool = False) -> np.ndarray:
    """Apply a boolean flip mask of shape ``s.shape + (log2 size,)`` to index bits."""
    nbits = bits_per_index(size)
    s = np.asarray(s, dtype=np.int64)
    flips = np.asarray(flips, dtype=bool)
    if flips.shape != s.shape + (nbits,):
        raise ValueError(f"flip mask shape {flips.shape} != {s.shape + (nbits,)}")
    word = _to_gray(s) if gray_code else s
    weights = np.left_shift(1, np.arange(nbits, dtype=np.int64))
    word = word ^ (flips.astype(np.int64) * weights).sum(axis=-1)
    return _from_gray(word, nbits) if gray_code else word


def index_bit_channel(s, size: int, cfg: ChannelConfig,
                      rng: np.random.Generator | None = None) -> np.ndarray:
    """Send each index as log2(size) BPSK bits; each bit flips with bit_error_prob(snr)."""
    s = np.asarray(s, dtype=np.int64)
    nbits = bits_per_index(size)
    if cfg.kind == "noiseless":
        return s.copy()
    if cfg.kind != "bit-index":
        raise ValueError(f"index_bit_channel needs a bit-index channel, got {cfg.kind!r}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    p = bit_error_prob(cfg.snr_db)
    flips = rng.random(s.shape + (nbits,)) < p
    return flip_bits(s, size, flips, cfg.gray_code)


def index_corruption_rate(snr_db: float, size: int) -> float:
    """Closed-form probability that at least one bit of an index flips."""
    return 1.0 - (1.0 - bit_error_prob(snr_db)) ** bits_per_index(size)
