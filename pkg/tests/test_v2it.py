import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scvq.tensor import Tensor, backward, ops
from scvq.v2it import (
    V2ITConfig,
    argmax_lowest,
    build_transformer,
    forward,
    predict_indices,
    stage2_loss,
)

TINY = V2ITConfig(seq_len=4, q=4, codebook_size=8, d_model=8, heads=2)


@pytest.fixture(scope="module")
def desk():
    return build_transformer(V2ITConfig(), seed=0)


def test_desk_config(desk):
    cfg = desk.config
    assert cfg.head_dim == 16
    assert desk.block_count == 9


def test_block_count_is_fixed():
    with pytest.raises(ValueError):
        build_transformer(V2ITConfig(n_blocks=6))
    with pytest.raises(ValueError):
        build_transformer(V2ITConfig(d_model=30, heads=4))
    with pytest.raises(ValueError):
        build_transformer(V2ITConfig(feature_target="other"))


def test_seeded_init():
    assert build_transformer(TINY, 3).fingerprint() == build_transformer(TINY, 3).fingerprint()
    assert build_transformer(TINY, 3).fingerprint() != build_transformer(TINY, 4).fingerprint()


def test_predict_shapes(desk):
    z = np.random.default_rng(0).standard_normal((2, 4, 4, 32))
    logits, feats, s_hat = predict_indices(z, desk)
    assert logits.shape == (2, 16, 128)
    assert feats.shape == (2, 16, 64)
    assert s_hat.shape == (2, 4, 4)
    np.testing.assert_array_equal(s_hat.reshape(2, 16), logits.data.argmax(-1))


def test_sequence_mismatch(desk):
    with pytest.raises(ValueError):
        predict_indices(np.zeros((1, 8, 8, 32)), desk)
    with pytest.raises(ValueError):
        predict_indices(np.zeros((1, 4, 4, 16)), desk)


def test_attention_rows_sum_to_one(desk):
    att = []
    predict_indices(np.random.default_rng(1).standard_normal((1, 4, 4, 32)), desk, att)
    assert len(att) == 9
    for a in att:
        np.testing.assert_allclose(a.sum(-1), 1.0, atol=1e-12)


def test_not_permutation_equivariant(desk):
    z = np.random.default_rng(2).standard_normal((1, 16, 32))
    perm = np.random.default_rng(3).permutation(16)
    a, _ = forward(z, desk)
    b, _ = forward(z[:, perm], desk)
    assert not np.allclose(a.data[:, perm], b.data, atol=1e-9)


def test_argmax_ties_take_lowest():
    assert argmax_lowest(np.array([[1.0, 3.0, 3.0], [2.0, 2.0, 2.0]])).tolist() == [1, 0]


def test_uniform_logits_cross_entropy():
    logits = Tensor(np.zeros((1, 16, 128)))
    s = np.random.default_rng(0).integers(0, 128, (1, 16))
    zc = np.zeros((1, 16, 4))
    loss = stage2_loss(logits, Tensor(np.zeros((1, 16, 4))), s, zc, lam=1.0)
    assert float(loss.data) == pytest.approx(16 * math.log(128), rel=1e-12)
    assert 16 * math.log(128) == pytest.approx(77.63, abs=0.01)


def test_feature_term_alone():
    feats = np.zeros((1, 2, 2))
    zc = np.array([[[1.0, 0.5], [0.5, 1.0]]])  # squared norm 2.5
    loss = stage2_loss(Tensor(np.zeros((1, 2, 4))), Tensor(feats), [[0, 1]], zc, lam=0.0)
    assert float(loss.data) == pytest.approx(2.5)


def test_perfect_predictor_drives_loss_to_zero():
    s = np.array([[0, 3, 1]])
    logits = np.full((1, 3, 4), -60.0)
    logits[0, np.arange(3), s[0]] = 60.0
    zc = np.random.default_rng(0).standard_normal((1, 3, 2))
    loss = stage2_loss(Tensor(logits), Tensor(zc), s, zc)
    assert float(loss.data) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(-50, 50), st.integers(0, 2 ** 31 - 1))
def test_ce_shift_invariance(c, seed):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((2, 5, 6))
    s = rng.integers(0, 6, (2, 5))
    zc = np.zeros((2, 5, 3))
    f = Tensor(np.zeros((2, 5, 3)))
    a = float(stage2_loss(Tensor(logits), f, s, zc).data)
    b = float(stage2_loss(Tensor(logits + c), f, s, zc).data)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


def test_loss_errors():
    with pytest.raises(IndexError):
        stage2_loss(Tensor(np.zeros((1, 2, 4))), Tensor(np.zeros((1, 2, 2))), [[0, 4]], np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        stage2_loss(Tensor(np.zeros((1, 2, 4))), Tensor(np.zeros((1, 2, 3))), [[0, 1]], np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        stage2_loss(Tensor(np.zeros((1, 2, 4))), None, [[0, 1]], np.zeros((1, 2, 2)),
                    feature_target="literal")


def test_gradient_reaches_transformer_not_target():
    params = build_transformer(TINY, 0)
    rng = np.random.default_rng(0)
    z_hat = rng.standard_normal((2, 4, 4))
    zc = Tensor(rng.standard_normal((2, 4, 4)), requires_grad=True)
    logits, feats = forward(z_hat, params)
    backward(stage2_loss(logits, feats, rng.integers(0, 8, (2, 4)), zc, proj=params.feat_proj))
    assert zc.grad is None
    for name, p in params.named_parameters():
        assert p.grad is not None, name


def test_literal_target_is_constant_in_params():
    params = build_transformer(TINY, 0)
    rng = np.random.default_rng(1)
    z_hat = rng.standard_normal((1, 4, 4))
    zc = rng.standard_normal((1, 4, 4))
    s = rng.integers(0, 8, (1, 4))
    logits, feats = forward(z_hat, params)
    lit = stage2_loss(logits, feats, s, zc, lam=0.0, feature_target="literal", z_hat=z_hat)
    assert float(lit.data) == pytest.approx(((z_hat - zc) ** 2).sum())
    ce_only = stage2_loss(logits, feats, s, zc, lam=0.5, feature_target="literal", z_hat=z_hat)
    backward(ce_only)
    assert params.feat_proj.weight.grad is None
    assert params.head.weight.grad is not None
