"""End-to-end transmission in four modes and the SNR sweep.

Modes:

- ``proposed``: encode, AWGN on the feature map, transformer predicts
  indices, codebook lookup, decode.
- ``no-v2it``: as above but the receiver quantizes the noisy feature map to
  its nearest code.
- ``index-tx``: the transmitter quantizes and sends each index as BPSK bits.
- ``jscc``: analog autoencoder, AWGN on the latent, no codebook.

Noise for image ``i`` at a given SNR comes from a generator seeded by
(seed, i, snr), shared by every mode, so comparisons are paired.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from scvq import channel, codebook as cbmod, codec, metrics, v2it
from scvq.harness import data, jscc
from scvq.tensor import no_grad
from scvq.train import Stage1Model

MODES = ("proposed", "no-v2it", "index-tx", "jscc")
DEFAULT_SNRS = (-3.0, 1.0, 5.0, 9.0, 13.0, 17.0, 21.0)
CSV_HEADER = "mode,snr_db,psnr_db,ssim,perceptual_proxy,index_accuracy,n_images,seed"


@dataclass
class Checkpoints:
    stage1: Stage1Model | None = None
    v2it: v2it.V2ITParams | None = None
    jscc: codec.CodecParams | None = None

    def require(self, mode: str) -> None:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        if mode == "jscc":
            if self.jscc is None:
                raise FileNotFoundError("mode 'jscc' needs a jscc checkpoint")
            return
        if self.stage1 is None:
            raise FileNotFoundError(f"mode {mode!r} needs a stage-1 checkpoint")
        if mode == "proposed":
            if self.v2it is None:
                raise FileNotFoundError("mode 'proposed' needs a stage-2 checkpoint")
            cfg, vcfg = self.stage1.config, self.v2it.config
            if (vcfg.seq_len, vcfg.q, vcfg.codebook_size) != (cfg.seq_len, cfg.q, cfg.codebook_size):
                raise ValueError(
                    f"transformer expects seq_len={vcfg.seq_len}, q={vcfg.q}, L={vcfg.codebook_size}; "
                    f"stage-1 model has {cfg.seq_len}, {cfg.q}, {cfg.codebook_size}")


@dataclass
class Transmission:
    """Batch output: reconstructions (uint8), received and sent indices (None for jscc)."""
    images: np.ndarray
    s_hat: np.ndarray | None
    s: np.ndarray | None


def noise_seed(seed: int, image_index: int, snr_db: float) -> int:
    """Per-(image, snr) noise seed, independent of the mode."""
    key = int(round(snr_db * 1000)) & 0xFFFFFFFF
    return int(np.random.SeedSequence([seed, image_index, key]).generate_state(1, np.uint32)[0])


def _awgn_each(z: np.ndarray, chan, rngs) -> np.ndarray:
    if chan.kind == "noiseless":
        return z.copy()
    awgn = channel.ChannelConfig("awgn-feature", chan.snr_db, chan.seed)
    return np.stack([channel.awgn_transmit(z[i], awgn, rngs[i]) for i in range(len(z))])


def transmit(images, mode: str, chan: channel.ChannelConfig, ckpts: Checkpoints,
             rngs=None) -> Transmission:
    """Send a (B, H, W, 3) uint8 batch through ``mode``.

    ``rngs`` holds one generator per image; by default every image uses
    ``chan.seed``. A ``noiseless`` channel disables noise in every mode.
    """
    ckpts.require(mode)
    images = np.asarray(images)
    if images.ndim != 4:
        raise ValueError(f"expected a (B, H, W, 3) batch, got {images.shape}")
    if rngs is None:
        rngs = [np.random.default_rng(chan.seed) for _ in range(len(images))]
    if mode == "jscc":
        model = ckpts.jscc
        x = metrics.from_uint8(images, model.encoder.head.weight.dtype)
        awgn = chan if chan.kind == "noiseless" else channel.ChannelConfig(
            "awgn-feature", chan.snr_db, chan.seed)
        return Transmission(metrics.to_uint8(jscc.transmit(model, x, awgn, list(rngs))), None, None)

    s1 = ckpts.stage1
    x = metrics.from_uint8(images, s1.codebook.codebook.dtype)
    with no_grad():
        z = codec.encode(x, s1.codec).data
        s, _ = cbmod.quantize(z, s1.codebook)
        if mode == "index-tx":
            if chan.kind == "noiseless":
                s_hat = s.copy()
            else:
                bits = channel.ChannelConfig("bit-index", chan.snr_db, chan.seed, chan.gray_code)
                s_hat = np.stack([channel.index_bit_channel(s[i], s1.codebook.size, bits, rngs[i])
                                  for i in range(len(s))])
        else:
            z_hat = _awgn_each(z, chan, rngs)
            if mode == "proposed":
                _, _, s_hat = v2it.predict_indices(z_hat, ckpts.v2it)
            else:
                s_hat, _ = cbmod.quantize(z_hat, s1.codebook)
        out = codec.decode(cbmod.lookup(s_hat, s1.codebook), s1.codec).data
    return Transmission(metrics.to_uint8(out), s_hat, s)


def _records(src: np.ndarray, tx: Transmission) -> list[metrics.MetricRecord]:
    prox = metrics.perceptual_proxy_batch(src, tx.images)
    recs = []
    for i in range(len(src)):
        acc = None if tx.s is None else metrics.index_accuracy(tx.s_hat[i], tx.s[i])
        recs.append(metrics.MetricRecord(metrics.psnr(src[i], tx.images[i]),
                                         metrics.ssim(src[i], tx.images[i]),
                                         float(prox[i]), acc))
    return recs


def run_pipeline(image, mode: str, chan: channel.ChannelConfig, ckpts: Checkpoints,
                 rng: np.random.Generator | None = None):
    """One (H, W, 3) uint8 image -> (reconstruction, MetricRecord)."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {image.shape}")
    tx = transmit(image[None], mode, chan, ckpts, None if rng is None else [rng])
    return tx.images[0], _records(image[None], tx)[0]


def evaluate(images, mode: str, snr_db: float | None, ckpts: Checkpoints, seed: int = 0,
             batch: int = 50, dump_dir=None, dump_count: int = 0) -> list[metrics.MetricRecord]:
    """Per-image metrics for one sweep cell; ``snr_db=None`` is the noiseless channel."""
    images = np.asarray(images)
    chan = channel.ChannelConfig("noiseless" if snr_db is None else "awgn-feature",
                                 0.0 if snr_db is None else float(snr_db), seed)
    recs = []
    for lo in range(0, len(images), batch):
        idx = range(lo, min(lo + batch, len(images)))
        rngs = [np.random.default_rng(noise_seed(seed, i, chan.snr_db)) for i in idx]
        tx = transmit(images[lo:idx.stop], mode, chan, ckpts, rngs)
        recs.extend(_records(images[lo:idx.stop], tx))
        if dump_dir is not None:
            for j, i in enumerate(idx):
                if i < dump_count:
                    tag = "noiseless" if snr_db is None else f"snr{snr_db:+g}"
                    d = Path(dump_dir) / mode / tag
                    d.mkdir(parents=True, exist_ok=True)
                    data.write_ppm(d / f"img_{i:05d}.ppm", tx.images[j])
    return recs


def mean_record(recs: list[metrics.MetricRecord]) -> metrics.MetricRecord:
    accs = [r.index_accuracy for r in recs]
    return metrics.MetricRecord(
        float(np.mean([r.psnr_db for r in recs])),
        float(np.mean([r.ssim for r in recs])),
        float(np.mean([r.perceptual_proxy for r in recs])),
        None if any(a is None for a in accs) else float(np.mean(accs)))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return f"{v:.6f}"


def format_row(mode: str, snr_db: float, rec: metrics.MetricRecord, n: int, seed: int) -> str:
    return ",".join([mode, f"{snr_db:g}", _fmt(rec.psnr_db), _fmt(rec.ssim),
                     _fmt(rec.perceptual_proxy), _fmt(rec.index_accuracy), str(n), str(seed)])


def sweep(images, modes, ckpts: Checkpoints, snr_list=DEFAULT_SNRS, out_csv=None, seed: int = 0,
          dump_dir=None, dump_count: int = 0) -> dict:
    """Mean metrics per (mode, snr) cell; writes the CSV when ``out_csv`` is given."""
    images = np.asarray(images)
    if len(images) == 0:
        raise ValueError("empty dataset")
    for m in modes:
        ckpts.require(m)
    cells = {}
    lines = [CSV_HEADER]
    for m in modes:
        for snr in snr_list:
            rec = mean_record(evaluate(images, m, snr, ckpts, seed,
                                       dump_dir=dump_dir, dump_count=dump_count))
            cells[(m, float(snr))] = rec
            lines.append(format_row(m, float(snr), rec, len(images), seed))
    if out_csv is not None:
        out_csv = Path(out_csv)
        out_csv.parent.mkdir(parents=True, exist_ok=True)
        out_csv.write_text("\n".join(lines) + "\n")
    return cells


def read_sweep(path) -> list[dict]:
    text = Path(path).read_text()
    return list(csv.DictReader(io.StringIO(text)))
