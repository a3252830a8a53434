"""Two-stage training.

Stage 1 trains encoder, decoder and codebook jointly (L1 + perceptual +
VQ + adversarial). Stage 2 freezes them and trains the vector-to-index
transformer on channel-corrupted feature maps.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from scvq import channel, codebook as cbmod, codec, v2it
from scvq.harness import checkpoint
from scvq.nn import Conv2d, Module
from scvq.perceptual import PerceptualExtractor, perceptual_loss
from scvq.tensor import Adam, NonFiniteError, Tensor, backward, no_grad, ops

log = logging.getLogger(__name__)

_PRECISION = {32: np.float32, 64: np.float64}


@dataclass(frozen=True)
class TrainConfig:
    stage: int = 1
    iterations: int = 8000
    batch_size: int = 4
    lr: float = 7e-5
    beta: float = 0.25
    vq_weight: float = 1.0
    lam: float = 0.5
    gan_weight: float = 0.1
    gan_warmup: float = 0.25
    perceptual_weight: float = 1.0
    snr_min_db: float = -5.0
    snr_max_db: float = 20.0
    seed: int = 0
    unfreeze_last_k_iters: int = 0
    # stage 1: re-seed codes unused over this many iterations (0 disables)
    code_restart_every: int = 200
    checkpoint_every: int = 0
    log_every: int = 100
    precision: int = 32

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.snr_min_db > self.snr_max_db:
            raise ValueError("snr range must be ordered (min <= max)")
        if self.code_restart_every < 0:
            raise ValueError("code_restart_every must be non-negative")
        if self.precision not in _PRECISION:
            raise ValueError("precision must be 32 or 64")

    @property
    def snr_range_db(self) -> tuple[float, float]:
        return (self.snr_min_db, self.snr_max_db)

    @property
    def dtype(self):
        return _PRECISION[self.precision]


# paper-scale settings, kept for the record (not runnable on a desk CPU)
PAPER_STAGE1 = TrainConfig(stage=1, iterations=415_000, batch_size=4, lr=7e-5)
PAPER_STAGE2 = TrainConfig(stage=2, iterations=200_000, batch_size=4, lr=1e-4)

# vq_weight = 1 / (m * n * q) for the desk codec: the summed VQ term then acts as a
# per-element mean, on the same footing as the mean-reduced L1 term
DESK_STAGE1 = TrainConfig(stage=1, iterations=8000, lr=2e-4, vq_weight=1.0 / 512)
DESK_STAGE2 = TrainConfig(stage=2, iterations=6000, lr=5e-4)


def config_fields(cls) -> set[str]:
    return {f.name for f in fields(cls)}


# -- networks used only during training --------------------------------------

class Discriminator(Module):
    """Three strided convolutions producing a patch score map."""

    def __init__(self, rng, width=16):
        self.c1 = Conv2d(3, width, 4, rng, stride=2, pad=1)
        self.c2 = Conv2d(width, 2 * width, 4, rng, stride=2, pad=1)
        self.c3 = Conv2d(2 * width, 1, 3, rng, stride=1, pad=1)

    def __call__(self, images) -> Tensor:
        h = ops.leaky_relu(self.c1(images))
        h = ops.leaky_relu(self.c2(h))
        return self.c3(h)


def result_loss(i_h, i_out, phi: PerceptualExtractor | None, perceptual_weight: float = 1.0):
    """Mean absolute difference plus weighted perceptual feature distance.

    Returns (total, l1, perceptual) tensors.
    """
    if tuple(i_h.shape) != tuple(i_out.shape):
        raise ValueError(f"shape mismatch {i_h.shape} vs {i_out.shape}")
    l1 = ops.mean(ops.abs(i_h - i_out))
    if phi is None or perceptual_weight == 0:
        perc = Tensor(np.zeros((), dtype=l1.dtype))
        return l1, l1, perc
    perc = perceptual_loss(phi, i_h, i_out)
    return l1 + perc * perceptual_weight, l1, perc


def gan_losses(disc, i_h, i_out):
    """Non-saturating GAN losses (loss_D, loss_G), score maps averaged.

    loss_D = softplus(-D(real)) + softplus(D(fake)) with the fake detached;
    loss_G = softplus(-D(fake)).
    """
    d_real = disc(i_h)
    d_fake_detached = disc(ops.stop_gradient(i_out))
    loss_d = ops.mean(ops.softplus(-d_real)) + ops.mean(ops.softplus(d_fake_detached))
    loss_g = ops.mean(ops.softplus(-disc(i_out)))
    return loss_d, loss_g


# -- model bundles -----------------------------------------------------------

@dataclass
class Stage1Model:
    codec: codec.CodecParams
    codebook: cbmod.Codebook

    @property
    def config(self) -> codec.CodecConfig:
        return self.codec.config

    def parameters(self):
        return self.codec.parameters() + self.codebook.parameters()

    def records(self) -> dict:
        recs = self.codec.state_dict("codec/")
        recs["codebook"] = self.codebook.codebook.data
        recs.update(checkpoint.config_records("codec", self.config.to_dict()))
        return recs

    def fingerprint(self) -> str:
        return self.codec.fingerprint() + self.codebook.fingerprint()

    def astype(self, dtype) -> "Stage1Model":
        self.codec.astype(dtype)
        self.codebook.astype(dtype)
        return self


def build_stage1(config: codec.CodecConfig, dtype=np.float64) -> Stage1Model:
    params = codec.build_codec(config, dtype)
    cb = cbmod.Codebook(config.codebook_size, config.q, seed=config.seed + 1, dtype=dtype)
    return Stage1Model(params, cb)


def _int_fields(cls, raw: dict) -> dict:
    out = {}
    for f in fields(cls):
        if f.name in raw:
            v = raw[f.name]
            out[f.name] = int(v) if f.type in ("int", int) else v
    return out


def stage1_from_records(recs: dict, dtype=np.float64) -> Stage1Model:
    raw = checkpoint.read_config("codec", recs)
    if not raw:
        raise checkpoint.CheckpointError("checkpoint has no codec config records")
    cfg = codec.CodecConfig(**_int_fields(codec.CodecConfig, raw))
    model = build_stage1(cfg, dtype)
    model.codec.load_state_dict(recs, "codec/")
    if "codebook" not in recs:
        raise checkpoint.CheckpointError("checkpoint has no 'codebook' record")
    cb = recs["codebook"]
    if cb.shape != model.codebook.codebook.shape:
        raise checkpoint.CheckpointError(f"codebook shape {cb.shape} does not match config")
    model.codebook.codebook.data = cb.astype(dtype)
    return model


def load_stage1(path, dtype=np.float64) -> Stage1Model:
    return stage1_from_records(checkpoint.load(path), dtype)


def v2it_from_records(recs: dict, dtype=np.float64) -> v2it.V2ITParams:
    raw = checkpoint.read_config("v2it", recs)
    if not raw:
        raise checkpoint.CheckpointError("checkpoint has no v2it config records")
    target = "literal" if raw.pop("literal_target", 0.0) else "feature"
    cfg = v2it.V2ITConfig(feature_target=target, **_int_fields(v2it.V2ITConfig, raw))
    model = v2it.build_transformer(cfg, 0, dtype)
    model.load_state_dict(recs, "v2it/")
    return model


def v2it_records(model: v2it.V2ITParams) -> dict:
    recs = model.state_dict("v2it/")
    cfg = model.config.to_dict()
    cfg["literal_target"] = cfg.pop("feature_target") == "literal"
    recs.update(checkpoint.config_records("v2it", cfg))
    return recs


def load_stage2(path, dtype=np.float64):
    """Return (v2it params, stage-1 model or None if the file holds no codec)."""
    recs = checkpoint.load(path)
    model = v2it_from_records(recs, dtype)
    s1 = stage1_from_records(recs, dtype) if "codebook" in recs else None
    return model, s1


# -- helpers -----------------------------------------------------------------

class CurveWriter:
    """Accumulates loss-curve rows and writes them as CSV."""

    def __init__(self, columns):
        self.columns = list(columns)
        self.rows: list[list] = []

    def add(self, *values):
        self.rows.append(list(values))

    def column(self, name) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=np.float64)

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([v if isinstance(v, (int, np.integer)) else f"{float(v):.8g}" for v in r])


def _check_loss(value: Tensor, what: str, it: int) -> None:
    if not np.isfinite(value.data).all():
        raise NonFiniteError(f"non-finite {what} at iteration {it}")


def _mean_ce(logits: np.ndarray, targets: np.ndarray) -> float:
    """Per-image summed cross-entropy, batch mean (matches the loss's CE term)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)
    return float(-picked.sum() / logits.shape[0])


def reconstruct(model: Stage1Model, images, batch: int = 64) -> np.ndarray:
    """Noiseless Stage-1 reconstruction (encode, quantize, decode)."""
    outs = []
    with no_grad():
        for i in range(0, len(images), batch):
            z = codec.encode(images[i:i + batch], model.codec)
            _, zc = cbmod.quantize(z, model.codebook)
            outs.append(codec.decode(zc, model.codec).data)
    return np.concatenate(outs)


def encode_dataset(model: Stage1Model, images, batch: int = 64):
    """Return (z_h, s, z_c) for every image, without gradients."""
    zs, ss, zcs = [], [], []
    with no_grad():
        for i in range(0, len(images), batch):
            z = codec.encode(images[i:i + batch], model.codec)
            s, zc = cbmod.quantize(z, model.codebook)
            zs.append(z.data)
            ss.append(s)
            zcs.append(zc.data)
    return np.concatenate(zs), np.concatenate(ss), np.concatenate(zcs)


def reconstruction_l1(model: Stage1Model, images) -> float:
    rec = reconstruct(model, images)
    return float(np.mean(np.abs(rec.astype(np.float64) - np.asarray(images, dtype=np.float64))))


def code_usage(model: Stage1Model, images) -> cbmod.CodebookStats:
    _, s, _ = encode_dataset(model, images)
    return cbmod.codebook_stats(cbmod.usage_histogram(s, model.codebook.size))


# -- Stage 1 -----------------------------------------------------------------

@dataclass
class Stage1Result:
    model: Stage1Model
    discriminator: Discriminator
    curves: CurveWriter
    initial_l1: float
    final_l1: float
    checkpoints: list = field(default_factory=list)


def train_stage1(images, config: TrainConfig = DESK_STAGE1,
                 codec_config: codec.CodecConfig | None = None,
                 out_dir=None, stop_after: int | None = None) -> Stage1Result:
    """Jointly train encoder, decoder and codebook.

    ``images`` is (N, H, W, 3) in [-1, 1]. Deterministic given the seeds in
    ``config`` and ``codec_config``. ``stop_after`` ends the run early while
    keeping the schedule of the full ``config.iterations`` run (GAN start,
    checkpoint names), so a prefix can be replayed and compared.
    """
    if config.stage != 1:
        raise ValueError("train_stage1 needs a stage-1 config")
    images = np.asarray(images)
    if len(images) == 0:
        raise ValueError("empty dataset")
    dtype = config.dtype
    images = images.astype(dtype)
    codec_config = codec_config or codec.CodecConfig(
        image_size=images.shape[1], seed=config.seed)
    model = build_stage1(codec_config, dtype)
    disc = Discriminator(np.random.default_rng(config.seed + 2)).astype(dtype)
    phi = PerceptualExtractor(config.seed + 3, dtype)
    rng = np.random.default_rng(config.seed + 4)

    opt = Adam(model.parameters(), lr=config.lr)
    opt_d = Adam(disc.parameters(), lr=config.lr)
    gan_start = int(config.gan_warmup * config.iterations)
    curves = CurveWriter(["iter", "l1", "perceptual", "vq", "gan_g", "gan_d"])
    initial_l1 = reconstruction_l1(model, images)
    saved = []
    usage = np.zeros(model.codebook.size, dtype=np.int64)
    cb_slot = len(model.codec.parameters())
    t0 = time.perf_counter()

    last = config.iterations if stop_after is None else min(stop_after, config.iterations)
    for it in range(1, last + 1):
        x = Tensor(images[rng.integers(0, len(images), config.batch_size)])
        z = codec.encode(x, model.codec)
        s, zc = cbmod.quantize(z, model.codebook)
        usage += np.bincount(s.reshape(-1), minlength=model.codebook.size)
        out = codec.decode(cbmod.straight_through(z, zc), model.codec)
        total, l1, perc = result_loss(x, out, phi, config.perceptual_weight)
        vq = cbmod.vq_loss(z, zc, config.beta)
        total = total + vq * config.vq_weight
        use_gan = config.gan_weight > 0 and it > gan_start
        gan_g = gan_d = 0.0
        if use_gan:
            loss_g = ops.mean(ops.softplus(-disc(out)))
            total = total + loss_g * config.gan_weight
            gan_g = float(loss_g.data)
        _check_loss(total, "stage-1 loss", it)
        opt.zero_grad()
        disc.zero_grad()
        backward(total)
        opt.step()

        if use_gan:
            disc.zero_grad()
            loss_d = (ops.mean(ops.softplus(-disc(x)))
                      + ops.mean(ops.softplus(disc(ops.stop_gradient(out)))))
            _check_loss(loss_d, "discriminator loss", it)
            backward(loss_d)
            opt_d.step()
            gan_d = float(loss_d.data)

        if config.code_restart_every and it % config.code_restart_every == 0:
            dead = cbmod.restart_dead_codes(model.codebook, usage, z.data, rng)
            if dead.size and opt.state.m:
                opt.state.m[cb_slot][dead] = 0.0
                opt.state.v[cb_slot][dead] = 0.0
            usage[:] = 0

        curves.add(it, float(l1.data), float(perc.data), float(vq.data), gan_g, gan_d)
        if config.log_every and it % config.log_every == 0:
            log.info("stage1 it=%d l1=%.4f perc=%.4f vq=%.4f gan_g=%.3f (%.1fs)",
                     it, l1.data, perc.data, vq.data, gan_g, time.perf_counter() - t0)
        if out_dir and config.checkpoint_every and it % config.checkpoint_every == 0:
            p = Path(out_dir) / f"stage1_it{it:06d}.ckpt"
            checkpoint.save(p, model.records())
            saved.append(p)

    final_l1 = reconstruction_l1(model, images)
    result = Stage1Result(model, disc, curves, initial_l1, final_l1, saved)
    if out_dir:
        out_dir = Path(out_dir)
        checkpoint.save(out_dir / "stage1.ckpt", model.records())
        curves.write(out_dir / "stage1_loss.csv")
    return result


# -- Stage 2 -----------------------------------------------------------------

@dataclass
class Stage2Result:
    model: v2it.V2ITParams
    stage1: Stage1Model
    curves: CurveWriter
    checkpoints: list = field(default_factory=list)


def _v2it_config_for(stage1: Stage1Model, base: v2it.V2ITConfig | None) -> v2it.V2ITConfig:
    cfg = stage1.config
    base = base or v2it.V2ITConfig()
    return replace(base, seq_len=cfg.seq_len, q=cfg.q, codebook_size=cfg.codebook_size)


def train_stage2(images, stage1: Stage1Model, config: TrainConfig = DESK_STAGE2,
                 v2it_config: v2it.V2ITConfig | None = None, out_dir=None,
                 channel_kind: str = "awgn-feature") -> Stage2Result:
    """Train the vector-to-index transformer with the Stage-1 model frozen.

    Each batch: frozen encode/quantize gives targets (s, z_c); the clean
    feature map goes through AWGN at an SNR drawn uniformly from the
    configured range (per image); the transformer is trained on the Stage-2
    loss. ``channel_kind="noiseless"`` skips the channel. The optional final
    ``unfreeze_last_k_iters`` iterations also update the Stage-1 parameters
    at a tenth of the learning rate.
    """
    if config.stage != 2:
        raise ValueError("train_stage2 needs a stage-2 config")
    images = np.asarray(images)
    if len(images) == 0:
        raise ValueError("empty dataset")
    if images.shape[1] != stage1.config.image_size:
        raise ValueError(
            f"image size {images.shape[1]} does not match the stage-1 grid config "
            f"({stage1.config.image_size})")
    dtype = config.dtype
    images = images.astype(dtype)
    stage1.astype(dtype)
    vcfg = _v2it_config_for(stage1, v2it_config)
    model = v2it.build_transformer(vcfg, config.seed, dtype)
    stage1.codec.freeze()
    stage1.codebook.freeze()
    rng = np.random.default_rng(config.seed + 4)
    chan = channel.ChannelConfig(kind=channel_kind, snr_db=0.0, seed=config.seed)

    opt = Adam(model.parameters(), lr=config.lr)
    z_all, s_all, zc_all = encode_dataset(stage1, images)
    unfreeze_at = config.iterations - config.unfreeze_last_k_iters
    opt_s1 = None
    curves = CurveWriter(["iter", "ce", "feat", "acc"])
    saved = []
    t0 = time.perf_counter()

    for it in range(1, config.iterations + 1):
        idx = rng.integers(0, len(images), config.batch_size)
        snr = rng.uniform(config.snr_min_db, config.snr_max_db, config.batch_size)
        if it > unfreeze_at:
            if opt_s1 is None:
                stage1.codec.freeze(False)
                stage1.codebook.freeze(False)
                opt_s1 = Adam(stage1.parameters(), lr=config.lr * 0.1)
            z = codec.encode(images[idx], stage1.codec)
            s, zc = cbmod.quantize(z, stage1.codebook)
            zc = ops.stop_gradient(zc)
            noisy = channel.awgn_transmit(z.data, chan, rng, snr) if channel_kind != "noiseless" else z.data
            z_hat = z + Tensor((noisy - z.data).astype(dtype))
        else:
            s, zc = s_all[idx], zc_all[idx]
            z_hat = channel.awgn_transmit(z_all[idx], chan, rng, snr)
        logits, feats = v2it.forward(z_hat, model)
        loss = v2it.stage2_loss(logits, feats, s, zc, config.lam, model.feat_proj,
                                vcfg.feature_target, z_hat)
        _check_loss(loss, "stage-2 loss", it)
        opt.zero_grad()
        if opt_s1 is not None:
            opt_s1.zero_grad()
        backward(loss)
        opt.step()
        if opt_s1 is not None:
            opt_s1.step()

        targets = np.asarray(s).reshape(logits.shape[:2])
        ce = _mean_ce(logits.data, targets)
        acc = float(np.mean(v2it.argmax_lowest(logits.data) == targets))
        curves.add(it, ce, float(loss.data) - config.lam * ce, acc)
        if config.log_every and it % config.log_every == 0:
            log.info("stage2 it=%d loss=%.4f ce=%.4f acc=%.3f (%.1fs)",
                     it, loss.data, ce, acc, time.perf_counter() - t0)
        if out_dir and config.checkpoint_every and it % config.checkpoint_every == 0:
            p = Path(out_dir) / f"stage2_it{it:06d}.ckpt"
            checkpoint.save(p, v2it_records(model))
            saved.append(p)

    stage1.codec.freeze(False)
    stage1.codebook.freeze(False)
    result = Stage2Result(model, stage1, curves, saved)
    if out_dir:
        out_dir = Path(out_dir)
        recs = v2it_records(model)
        if config.unfreeze_last_k_iters:
            recs.update(stage1.records())
        checkpoint.save(out_dir / "stage2.ckpt", recs)
        curves.write(out_dir / "stage2_loss.csv")
    return result


def v2it_accuracy(model: v2it.V2ITParams, stage1: Stage1Model, images, snr_db=None,
                  seed: int = 0, batch: int = 64) -> float:
    """Index accuracy against Stage-1 targets; ``snr_db=None`` means noiseless."""
    z, s, _ = encode_dataset(stage1, np.asarray(images).astype(stage1.codebook.codebook.dtype))
    rng = np.random.default_rng(seed)
    chan = channel.ChannelConfig(kind="noiseless" if snr_db is None else "awgn-feature",
                                 snr_db=0.0 if snr_db is None else snr_db)
    hits = []
    with no_grad():
        for i in range(0, len(z), batch):
            zh = channel.awgn_transmit(z[i:i + batch], chan, rng)
            _, _, s_hat = v2it.predict_indices(zh, model)
            hits.append(s_hat == s[i:i + batch])
    return float(np.mean(np.concatenate(hits)))

