"""Fixed random-weight convolutional feature extractor.

Stands in for a pretrained perceptual network: weights are drawn once from a
seed and never trained. Features are tapped after each of three stages.
"""

from __future__ import annotations

import math

import numpy as np

from scvq.tensor import Tensor, ops
from scvq.tensor.core import as_tensor

METRIC_SEED = 1234
_STAGES = ((3, 8, 1), (8, 16, 2), (16, 32, 2))


class PerceptualExtractor:
    def __init__(self, seed: int = METRIC_SEED, dtype=np.float64):
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.layers = []
        for cin, cout, stride in _STAGES:
            w = rng.standard_normal((3, 3, cin, cout)) * math.sqrt(2.0 / (cin * 9))
            w.setflags(write=False)
            self.layers.append((Tensor(w.astype(dtype)), stride))

    def astype(self, dtype) -> "PerceptualExtractor":
        self.layers = [(Tensor(w.data.astype(dtype)), s) for w, s in self.layers]
        return self

    def taps(self, images) -> list[Tensor]:
        """(B, H, W, 3) images in [-1, 1] -> list of (B, h, w, C) feature maps."""
        x = as_tensor(images, dtype=self.layers[0][0].dtype)
        if x.ndim == 3:
            x = x.reshape(1, *x.shape)
        h = x
        out = []
        for w, stride in self.layers:
            h = ops.leaky_relu(ops.conv2d(h, w, None, stride, 1))
            out.append(h)
        return out

    __call__ = taps


def perceptual_loss(phi: PerceptualExtractor, a, b) -> Tensor:
    """Sum over taps of the mean squared feature difference."""
    total = None
    for ta, tb in zip(phi.taps(a), phi.taps(b)):
        term = ops.mean(ops.square(ta - tb))
        total = term if total is None else total + term
    return total
