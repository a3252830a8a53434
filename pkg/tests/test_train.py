import math

import numpy as np
import pytest

from scvq import codebook as cbmod
from scvq import codec, v2it
from scvq import train
from scvq.codec import CodecConfig
from scvq.harness import checkpoint
from scvq.harness.data import synth_dataset
from scvq.metrics import from_uint8
from scvq.perceptual import PerceptualExtractor
from scvq.tensor import Tensor, backward
from scvq.train import Discriminator, TrainConfig, gan_losses, result_loss
from scvq.v2it import V2ITConfig

TINY_CODEC = CodecConfig(image_size=16, factor=4, q=8, base_width=8, blocks_per_scale=1,
                         codebook_size=16)
TINY_V2IT = V2ITConfig(d_model=16, heads=2)


@pytest.fixture(scope="module")
def data():
    return from_uint8(synth_dataset(12, 16, seed=5))


@pytest.fixture(scope="module")
def stage1(data):
    cfg = TrainConfig(stage=1, iterations=20, lr=1e-3, log_every=0, code_restart_every=5)
    return train.train_stage1(data, cfg, TINY_CODEC).model


# -- losses ---------------------------------------------------------------------

def test_result_loss_examples():
    rng = np.random.default_rng(0)
    a = Tensor(rng.uniform(-0.8, 0.8, (2, 16, 16, 3)))
    phi = PerceptualExtractor(1)
    total, l1, perc = result_loss(a, a, phi)
    assert float(total.data) == 0.0
    _, l1, perc = result_loss(a, a + 0.1, phi)
    assert float(l1.data) == pytest.approx(0.1)
    assert float(perc.data) >= 0
    with pytest.raises(ValueError):
        result_loss(a, Tensor(np.zeros((2, 8, 8, 3))), phi)


def test_perceptual_weight_zero_is_plain_l1():
    rng = np.random.default_rng(1)
    a, b = Tensor(rng.uniform(-1, 1, (1, 8, 8, 3))), Tensor(rng.uniform(-1, 1, (1, 8, 8, 3)))
    total, l1, _ = result_loss(a, b, PerceptualExtractor(0), perceptual_weight=0.0)
    assert float(total.data) == float(l1.data)


class ConstantD:
    """Scores ``real`` on the bound real batch and ``fake`` on anything else."""

    def __init__(self, real, fake):
        self.real, self.fake = real, fake

    def bind(self, batch):
        self._real_data = batch.data
        return self

    def __call__(self, x):
        v = self.real if x.data is self._real_data else self.fake
        return x * 0.0 + v


def test_gan_losses_at_zero_output():
    x, y = Tensor(np.zeros((1, 8, 8, 3))), Tensor(np.ones((1, 8, 8, 3)))
    loss_d, loss_g = gan_losses(ConstantD(0.0, 0.0).bind(x), x, y)
    assert float(loss_d.data) == pytest.approx(2 * math.log(2))
    assert float(loss_g.data) == pytest.approx(math.log(2))


def test_gan_discriminator_loss_limit():
    x, y = Tensor(np.zeros((1, 8, 8, 3))), Tensor(np.ones((1, 8, 8, 3)))
    loss_d, _ = gan_losses(ConstantD(60.0, -60.0).bind(x), x, y)
    assert float(loss_d.data) < 1e-20


def test_gan_generator_grad_skips_detached_branch():
    rng = np.random.default_rng(0)
    disc = Discriminator(rng, width=4)
    x = Tensor(rng.uniform(-1, 1, (1, 8, 8, 3)))
    y = Tensor(rng.uniform(-1, 1, (1, 8, 8, 3)), requires_grad=True)
    loss_d, _ = gan_losses(disc, x, y)
    backward(loss_d)
    assert y.grad is None


# -- stage 1 ----------------------------------------------------------------------

def short(stage, **kw):
    base = dict(stage=stage, iterations=6, lr=1e-3, log_every=0)
    base.update(kw)
    return TrainConfig(**base)


def test_stage1_is_deterministic(data, tmp_path):
    a = train.train_stage1(data, short(1, gan_warmup=0.5), TINY_CODEC, tmp_path / "a")
    b = train.train_stage1(data, short(1, gan_warmup=0.5), TINY_CODEC, tmp_path / "b")
    assert checkpoint.file_hash(tmp_path / "a" / "stage1.ckpt") == \
        checkpoint.file_hash(tmp_path / "b" / "stage1.ckpt")
    assert (tmp_path / "a" / "stage1_loss.csv").read_bytes() == \
        (tmp_path / "b" / "stage1_loss.csv").read_bytes()
    assert a.curves.rows == b.curves.rows


def test_gan_weight_zero_matches_gan_never_active(data):
    a = train.train_stage1(data, short(1, gan_weight=0.0), TINY_CODEC)
    b = train.train_stage1(data, short(1, gan_weight=0.1, gan_warmup=1.0), TINY_CODEC)
    assert a.model.fingerprint() == b.model.fingerprint()


def test_stage1_loss_components_nonnegative(data):
    res = train.train_stage1(data, short(1, gan_warmup=0.0), TINY_CODEC)
    for col in ("l1", "perceptual", "vq", "gan_g", "gan_d"):
        assert (res.curves.column(col) >= 0).all()


def test_stage1_checkpoints_and_reload(data, tmp_path):
    res = train.train_stage1(data, short(1, checkpoint_every=3), TINY_CODEC, tmp_path)
    assert [p.name for p in res.checkpoints] == ["stage1_it000003.ckpt", "stage1_it000006.ckpt"]
    back = train.load_stage1(tmp_path / "stage1.ckpt", dtype=np.float32)
    assert back.config == TINY_CODEC
    assert back.fingerprint() == res.model.fingerprint()


def test_stage1_errors(data):
    with pytest.raises(ValueError):
        train.train_stage1(data[:0], short(1), TINY_CODEC)
    with pytest.raises(ValueError):
        train.train_stage1(data, short(2), TINY_CODEC)


def test_non_finite_loss_aborts(data):
    bad = data.copy()
    bad[:] = np.nan
    with pytest.raises(FloatingPointError):
        train.train_stage1(bad, short(1), TINY_CODEC)


@pytest.mark.parametrize("kw", [dict(lr=0.0), dict(batch_size=0), dict(snr_min_db=5, snr_max_db=0),
                                dict(precision=16), dict(code_restart_every=-1)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_paper_presets_recorded():
    assert (train.PAPER_STAGE1.lr, train.PAPER_STAGE2.lr) == (7e-5, 1e-4)
    assert (train.PAPER_STAGE1.iterations, train.PAPER_STAGE2.iterations) == (415_000, 200_000)
    assert train.PAPER_STAGE1.batch_size == 4
    assert (train.DESK_STAGE1.iterations, train.DESK_STAGE2.iterations) == (8000, 6000)


# -- stage 2 ----------------------------------------------------------------------

def test_stage2_leaves_stage1_untouched(data, stage1, tmp_path):
    before = stage1.fingerprint()
    res = train.train_stage2(data, stage1, short(2), TINY_V2IT, tmp_path)
    assert stage1.fingerprint() == before
    assert res.model.config.codebook_size == 16
    assert (tmp_path / "stage2.ckpt").exists()
    v2 = train.v2it_from_records(checkpoint.load(tmp_path / "stage2.ckpt"), np.float32)
    assert v2.fingerprint() == res.model.fingerprint()


def test_stage2_frozen_groups_get_zero_gradient(data, stage1):
    stage1.codec.zero_grad()
    stage1.codebook.zero_grad()
    stage1.codec.freeze()
    stage1.codebook.freeze()
    try:
        params = v2it.build_transformer(
            V2ITConfig(seq_len=16, q=8, codebook_size=16, d_model=16, heads=2))
        z = codec.encode(data[:2], stage1.codec)
        s, zc = cbmod.quantize(z, stage1.codebook)
        logits, feats = v2it.forward(z, params)
        backward(v2it.stage2_loss(logits, feats, s, zc, proj=params.feat_proj))
        assert all(p.grad is None or not np.any(p.grad) for p in stage1.parameters())
        assert params.head.weight.grad is not None
    finally:
        stage1.codec.freeze(False)
        stage1.codebook.freeze(False)


def test_stage2_unfreeze_phase_moves_stage1(data, tmp_path):
    s1 = train.train_stage1(data, short(1), TINY_CODEC).model
    before = s1.fingerprint()
    train.train_stage2(data, s1, short(2, unfreeze_last_k_iters=2), TINY_V2IT, tmp_path)
    assert s1.fingerprint() != before
    # the stage-2 file then carries the updated codec
    assert train.stage1_from_records(checkpoint.load(tmp_path / "stage2.ckpt"),
                                     np.float32).fingerprint() == s1.fingerprint()


def test_stage2_is_deterministic(data, stage1):
    a = train.train_stage2(data, stage1, short(2), TINY_V2IT)
    b = train.train_stage2(data, stage1, short(2), TINY_V2IT)
    assert a.model.fingerprint() == b.model.fingerprint()
    assert a.curves.rows == b.curves.rows


def test_stage2_errors(data, stage1):
    with pytest.raises(ValueError):
        train.train_stage2(data, stage1, short(1), TINY_V2IT)
    with pytest.raises(ValueError):
        train.train_stage2(from_uint8(synth_dataset(2, 32, 0)), stage1, short(2), TINY_V2IT)


def test_v2it_accuracy_range(data, stage1):
    res = train.train_stage2(data, stage1, short(2), TINY_V2IT)
    acc = train.v2it_accuracy(res.model, stage1, data)
    assert 0.0 <= acc <= 1.0


def test_curve_writer(tmp_path):
    w = train.CurveWriter(["iter", "loss"])
    w.add(1, 0.5)
    w.add(2, 1 / 3)
    w.write(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text() == "iter,loss\n1,0.5\n2,0.33333333\n"
    np.testing.assert_array_equal(w.column("iter"), [1, 2])


def test_lr_zero_step_changes_nothing():
    from scvq.tensor import AdamState, adam_step
    p = Tensor(np.ones(4), requires_grad=True)
    adam_step([p], [np.arange(4.0)], AdamState(lr=0.0))
    assert p.data.tolist() == [1.0] * 4
