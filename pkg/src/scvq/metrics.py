"""Image-quality and pipeline metrics: PSNR, SSIM, perceptual proxy, index accuracy.

PSNR and SSIM work in the 8-bit [0, 255] domain; use :func:`to_uint8` to
convert network output in [-1, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from scvq.perceptual import METRIC_SEED, PerceptualExtractor
from scvq.tensor import no_grad


@dataclass
class MetricRecord:
    psnr_db: float
    ssim: float
    perceptual_proxy: float
    index_accuracy: float | None = None


def to_uint8(img) -> np.ndarray:
    """[-1, 1] floats -> [0, 255] uint8 (round half to even, clipped)."""
    x = np.asarray(img, dtype=np.float64)
    return np.clip(np.rint((x + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_uint8(img, dtype=np.float64) -> np.ndarray:
    return (np.asarray(img, dtype=dtype) / 127.5 - 1.0).astype(dtype)


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """10 log10(255^2 / MSE); ``inf`` for identical images."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def grayscale(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    patches = sliding_window_view(x, win.shape)
    return np.einsum("ijkl,kl->ij", patches, win)


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 255.0) -> float:
    """Mean SSIM over all fully-contained Gaussian windows, on luma."""
    a, b = _check_pair(a, b)
    ga, gb = grayscale(a), grayscale(b)
    if ga.shape[0] < window or ga.shape[1] < window:
        raise ValueError(f"image {ga.shape} smaller than the {window}x{window} window")
    w = gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a = _filter_valid(ga, w)
    mu_b = _filter_valid(gb, w)
    var_a = _filter_valid(ga * ga, w) - mu_a * mu_a
    var_b = _filter_valid(gb * gb, w) - mu_b * mu_b
    cov = _filter_valid(ga * gb, w) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


_METRIC_PHI: PerceptualExtractor | None = None


def metric_extractor() -> PerceptualExtractor:
    global _METRIC_PHI
    if _METRIC_PHI is None:
        _METRIC_PHI = PerceptualExtractor(METRIC_SEED, np.float64)
    return _METRIC_PHI


def _unit(f: np.ndarray) -> np.ndarray:
    norm = np.sqrt((f * f).sum(axis=-1, keepdims=True))
    return f / (norm + 1e-10)


def perceptual_proxy_batch(a, b, phi: PerceptualExtractor | None = None) -> np.ndarray:
    """Per-image :func:`perceptual_proxy` for (B, H, W, 3) batches in [0, 255]."""
    a, b = _check_pair(a, b)
    if a.ndim != 4:
        raise ValueError(f"expected a (B, H, W, 3) batch, got {a.shape}")
    phi = phi or metric_extractor()
    with no_grad():
        ta = phi.taps(a / 127.5 - 1.0)
        tb = phi.taps(b / 127.5 - 1.0)
    per_tap = []
    for fa, fb in zip(ta, tb):
        d = _unit(fa.data) - _unit(fb.data)
        per_tap.append((d * d).sum(axis=-1).mean(axis=(1, 2)))
    return np.mean(per_tap, axis=0)


def perceptual_proxy(a, b, phi: PerceptualExtractor | None = None) -> float:
    """Channel-normalised squared feature distance, averaged over taps.

    Inputs are [0, 255] images (H, W, 3) or batches thereof (batch mean). This
    is a fixed random-feature surrogate, not LPIPS.
    """
    a, b = _check_pair(a, b)
    if a.ndim == 3:
        a, b = a[None], b[None]
    return float(np.mean(perceptual_proxy_batch(a, b, phi)))


def index_accuracy(s_hat, s) -> float:
    s_hat = np.asarray(s_hat)
    s = np.asarray(s)
    if s_hat.shape != s.shape:
        raise ValueError(f"shape mismatch {s_hat.shape} vs {s.shape}")
    return float(np.mean(s_hat == s))
