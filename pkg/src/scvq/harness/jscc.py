"""Analog joint source-channel coding baseline.

The same convolutional encoder/decoder as the codec, with no quantizer: the
encoder output (m * n * q reals, the same channel usage as the proposed
pipeline) goes straight through AWGN and is decoded.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from scvq import channel, codec
from scvq.harness import checkpoint
from scvq.perceptual import PerceptualExtractor
from scvq.tensor import Adam, Tensor, backward, no_grad
from scvq.train import CurveWriter, TrainConfig, _check_loss, _int_fields, result_loss

log = logging.getLogger(__name__)

DESK_JSCC = TrainConfig(stage=1, iterations=2000, lr=2e-4, gan_weight=0.0)


@dataclass
class JSCCResult:
    model: codec.CodecParams
    curves: CurveWriter
    initial_l1: float
    final_l1: float


def jscc_records(model: codec.CodecParams) -> dict:
    recs = model.state_dict("jscc/")
    recs.update(checkpoint.config_records("jscc", model.config.to_dict()))
    return recs


def jscc_from_records(recs: dict, dtype=np.float64) -> codec.CodecParams:
    raw = checkpoint.read_config("jscc", recs)
    if not raw:
        raise checkpoint.CheckpointError("checkpoint has no jscc config records")
    model = codec.build_codec(codec.CodecConfig(**_int_fields(codec.CodecConfig, raw)), dtype)
    model.load_state_dict(recs, "jscc/")
    return model


def load_jscc(path, dtype=np.float64) -> codec.CodecParams:
    return jscc_from_records(checkpoint.load(path), dtype)


def transmit(model: codec.CodecParams, images, chan: channel.ChannelConfig, rngs=None,
             snr_db=None) -> np.ndarray:
    """Encode, pass through ``chan`` (one generator per image), decode. Returns [-1, 1] images."""
    with no_grad():
        z = codec.encode(images, model).data
        if chan.kind != "noiseless":
            snr = np.broadcast_to(chan.snr_db if snr_db is None else snr_db, (len(z),))
            rngs = rngs or [np.random.default_rng(chan.seed)] * len(z)
            z = np.stack([channel.awgn_transmit(z[i], chan, rngs[i], snr[i]) for i in range(len(z))])
        return codec.decode(z, model).data


def _l1(model, images, seed) -> float:
    # noiseless reconstruction quality, the quantity the smoke gate tracks
    chan = channel.ChannelConfig(kind="noiseless", seed=seed)
    outs = [transmit(model, images[i:i + 64], chan) for i in range(0, len(images), 64)]
    return float(np.mean(np.abs(np.concatenate(outs).astype(np.float64) - images)))


def train_jscc(images, config: TrainConfig = DESK_JSCC,
               codec_config: codec.CodecConfig | None = None, out_dir=None) -> JSCCResult:
    """Train the analog autoencoder end to end with AWGN at a per-image uniform SNR."""
    images = np.asarray(images)
    if len(images) == 0:
        raise ValueError("empty dataset")
    dtype = config.dtype
    images = images.astype(dtype)
    codec_config = codec_config or codec.CodecConfig(image_size=images.shape[1], seed=config.seed)
    model = codec.build_codec(codec_config, dtype)
    phi = PerceptualExtractor(config.seed + 3, dtype)
    rng = np.random.default_rng(config.seed + 4)
    chan = channel.ChannelConfig(kind="awgn-feature", seed=config.seed)
    opt = Adam(model.parameters(), lr=config.lr)
    curves = CurveWriter(["iter", "l1", "perceptual"])
    initial_l1 = _l1(model, images, config.seed)
    t0 = time.perf_counter()

    for it in range(1, config.iterations + 1):
        x = Tensor(images[rng.integers(0, len(images), config.batch_size)])
        snr = rng.uniform(config.snr_min_db, config.snr_max_db, config.batch_size)
        z = codec.encode(x, model)
        noise = channel.awgn_transmit(z.data, chan, rng, snr) - z.data
        out = codec.decode(z + Tensor(noise.astype(dtype)), model)
        total, l1, perc = result_loss(x, out, phi, config.perceptual_weight)
        _check_loss(total, "jscc loss", it)
        opt.zero_grad()
        backward(total)
        opt.step()
        curves.add(it, float(l1.data), float(perc.data))
        if config.log_every and it % config.log_every == 0:
            log.info("jscc it=%d l1=%.4f perc=%.4f (%.1fs)", it, l1.data, perc.data,
                     time.perf_counter() - t0)

    result = JSCCResult(model, curves, initial_l1, _l1(model, images, config.seed))
    if out_dir:
        out_dir = Path(out_dir)
        checkpoint.save(out_dir / "jscc.ckpt", jscc_records(model))
        curves.write(out_dir / "jscc_loss.csv")
    return result
