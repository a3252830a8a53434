"""Convolutional semantic encoder and image decoder.

Images cross this module as (B, H, W, 3) arrays in [-1, 1]; feature maps as
(B, m, n, q) with m = H / factor, n = W / factor.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from scvq.nn import Conv2d, ConvNormAct, ConvTranspose2d, GroupNorm, Module
from scvq.tensor import Tensor, ops
from scvq.tensor.core import as_tensor, default_dtype


@dataclass(frozen=True)
class CodecConfig:
    image_size: int = 32
    factor: int = 8
    q: int = 32
    base_width: int = 32
    blocks_per_scale: int = 2
    groups: int = 4
    codebook_size: int = 128
    seed: int = 0

    @property
    def grid(self) -> int:
        return self.image_size // self.factor

    @property
    def seq_len(self) -> int:
        return self.grid * self.grid

    @property
    def channel_uses(self) -> int:
        """Real values sent per image, N = m * n * q."""
        return self.seq_len * self.q

    def validate(self) -> None:
        if self.factor not in (4, 8):
            raise ValueError(f"downsampling factor must be 4 or 8, got {self.factor}")
        if self.image_size % self.factor:
            raise ValueError(
                f"image size {self.image_size} not divisible by factor {self.factor}")
        if self.q < 4:
            raise ValueError(f"q must be at least 4, got {self.q}")
        if self.base_width <= 0 or self.blocks_per_scale < 0:
            raise ValueError("widths and block counts must be positive")
        if self.base_width % self.groups:
            raise ValueError("base width must be divisible by the group count")

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "desk": CodecConfig(),
    # recorded for reference only; never trained here
    "paper": CodecConfig(image_size=512, factor=8, q=256, codebook_size=1024),
}


class Encoder(Module):
    def __init__(self, cfg: CodecConfig, rng: np.random.Generator):
        w = cfg.base_width
        self.stem = Conv2d(3, w, 3, rng)
        self.blocks = []
        self.down = []
        for _ in range(int(math.log2(cfg.factor))):
            self.blocks.append([ConvNormAct(w, w, rng, cfg.groups)
                                for _ in range(cfg.blocks_per_scale)])
            self.down.append(Conv2d(w, w, 4, rng, stride=2, pad=1))
        self.out_norm = GroupNorm(w, cfg.groups)
        self.head = Conv2d(w, cfg.q, 1, rng)

    def named_parameters(self, prefix=""):
        yield from self.stem.named_parameters(prefix + "stem/")
        for i, (blocks, down) in enumerate(zip(self.blocks, self.down)):
            for j, b in enumerate(blocks):
                yield from b.named_parameters(f"{prefix}scale{i}/block{j}/")
            yield from down.named_parameters(f"{prefix}scale{i}/down/")
        yield from self.out_norm.named_parameters(prefix + "out_norm/")
        yield from self.head.named_parameters(prefix + "head/")

    def __call__(self, x: Tensor) -> Tensor:
        h = self.stem(x)
        for blocks, down in zip(self.blocks, self.down):
            for b in blocks:
                h = b(h)
            h = down(h)
        h = ops.leaky_relu(self.out_norm(h))
        return self.head(h)


class Decoder(Module):
    def __init__(self, cfg: CodecConfig, rng: np.random.Generator):
        w = cfg.base_width
        self.stem = Conv2d(cfg.q, w, 1, rng)
        self.up = []
        self.blocks = []
        for _ in range(int(math.log2(cfg.factor))):
            self.up.append(ConvTranspose2d(w, w, 4, rng, stride=2, pad=1))
            self.blocks.append([ConvNormAct(w, w, rng, cfg.groups)
                                for _ in range(cfg.blocks_per_scale)])
        self.out = Conv2d(w, 3, 3, rng)

    def named_parameters(self, prefix=""):
        yield from self.stem.named_parameters(prefix + "stem/")
        for i, (up, blocks) in enumerate(zip(self.up, self.blocks)):
            yield from up.named_parameters(f"{prefix}scale{i}/up/")
            for j, b in enumerate(blocks):
                yield from b.named_parameters(f"{prefix}scale{i}/block{j}/")
        yield from self.out.named_parameters(prefix + "out/")

    def __call__(self, z: Tensor) -> Tensor:
        h = self.stem(z)
        for up, blocks in zip(self.up, self.blocks):
            h = up(h)
            for b in blocks:
                h = b(h)
        return ops.tanh(self.out(h))


class CodecParams(Module):
    """Encoder weights (theta), decoder weights (xi) and their architecture config."""

    def __init__(self, config: CodecConfig, encoder: Encoder, decoder: Decoder):
        self.config = config
        self.encoder = encoder
        self.decoder = decoder


def build_codec(config: CodecConfig = CodecConfig(), dtype=None) -> CodecParams:
    """Deterministically initialise encoder and decoder from ``config.seed``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    with default_dtype(dtype or np.float64):
        enc = Encoder(config, rng)
        dec = Decoder(config, rng)
    return CodecParams(config, enc, dec)


def _check_finite(t: Tensor, what: str) -> None:
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"non-finite activations in {what}")


def encode(images, params: CodecParams) -> Tensor:
    """(B, H, W, 3) images in [-1, 1] -> (B, m, n, q) feature map."""
    cfg = params.config
    x = as_tensor(images, dtype=params.encoder.head.weight.dtype)
    if x.ndim == 3:
        x = x.reshape(1, *x.shape)
    if x.ndim != 4 or x.shape[1:] != (cfg.image_size, cfg.image_size, 3):
        raise ValueError(
            f"expected images of shape (B, {cfg.image_size}, {cfg.image_size}, 3), got {x.shape}")
    z = params.encoder(x)
    _check_finite(z, "encoder")
    return z


def decode(z, params: CodecParams) -> Tensor:
    """(B, m, n, q) feature map -> (B, H, W, 3) image in [-1, 1]."""
    cfg = params.config
    z = as_tensor(z, dtype=params.decoder.stem.weight.dtype)
    if z.ndim == 3:
        z = z.reshape(1, *z.shape)
    if z.ndim != 4 or z.shape[1:] != (cfg.grid, cfg.grid, cfg.q):
        raise ValueError(f"expected feature map (B, {cfg.grid}, {cfg.grid}, {cfg.q}), got {z.shape}")
    return params.decoder(z)
