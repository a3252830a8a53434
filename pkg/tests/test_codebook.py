import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scvq import codebook as cbmod
from scvq.tensor import Tensor, backward, ops


def brute_force(z, table):
    """Exhaustive search; strict < keeps the lowest index on ties."""
    out = []
    for v in z.reshape(-1, z.shape[-1]):
        best, best_k = np.inf, -1
        for k, c in enumerate(table):
            d = float(sum((float(a) - float(b)) ** 2 for a, b in zip(v, c)))
            if d < best:
                best, best_k = d, k
        out.append(best_k)
    return np.array(out).reshape(z.shape[:-1])


def test_two_code_example():
    table = np.array([[0.0, 0.0], [1.0, 1.0]])
    s, zc = cbmod.quantize(np.array([0.2, 0.1]), table)
    assert int(s) == 0
    np.testing.assert_array_equal(zc.data, [0.0, 0.0])


def test_equidistant_goes_to_lowest_index():
    table = np.array([[0.0, 0.0], [1.0, 1.0]])
    s, _ = cbmod.quantize(np.array([0.5, 0.5]), table)
    assert int(s) == 0
    # duplicated codes: the first copy wins
    s, _ = cbmod.quantize(np.array([[3.0, 3.0]]), np.array([[9.0, 9.0], [3.0, 3.0], [3.0, 3.0]]))
    assert int(s[0]) == 1


def test_matches_brute_force_l16_q4():
    rng = np.random.default_rng(11)
    table = rng.standard_normal((16, 4))
    z = rng.standard_normal((1000, 4))
    s, zc = cbmod.quantize(z, table)
    np.testing.assert_array_equal(s, brute_force(z, table))
    np.testing.assert_array_equal(zc.data, table[s])


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), st.integers(1, 5), st.integers(0, 2 ** 31 - 1))
def test_integer_grid_ties_property(size, dim, seed):
    # small integer coordinates make exact distance ties common
    rng = np.random.default_rng(seed)
    table = rng.integers(-2, 3, (size, dim)).astype(np.float64)
    z = rng.integers(-2, 3, (40, dim)).astype(np.float64) + rng.choice([0.0, 0.5], (40, dim))
    s, zc = cbmod.quantize(z, table)
    np.testing.assert_array_equal(s, brute_force(z, table))
    # minimality against every code
    d_best = ((z - zc.data) ** 2).sum(-1)
    d_all = ((z[:, None, :] - table[None]) ** 2).sum(-1)
    assert (d_best[:, None] <= d_all).all()


def test_lookup_equals_quantize_output():
    rng = np.random.default_rng(0)
    cb = cbmod.Codebook(32, 6, seed=3)
    z = rng.standard_normal((2, 4, 4, 6)) * 0.05
    s, zc = cbmod.quantize(z, cb)
    assert zc.data.tobytes() == cbmod.lookup(s, cb).data.tobytes()


def test_constant_grid_lookup():
    cb = cbmod.Codebook(8, 3, seed=0)
    out = cbmod.lookup(np.full((2, 2), 5), cb).data
    np.testing.assert_array_equal(out, np.broadcast_to(cb.codebook.data[5], (2, 2, 3)))


def test_lookup_then_quantize_is_idempotent():
    cb = cbmod.Codebook(128, 32, seed=7)
    table = cb.codebook.data
    # the seeded init must give pairwise-distinct vectors
    assert len(np.unique(table, axis=0)) == 128
    s = np.arange(128).reshape(8, 16)
    s2, _ = cbmod.quantize(cbmod.lookup(s, cb), cb)
    np.testing.assert_array_equal(s2, s)


def test_init_range():
    cb = cbmod.Codebook(64, 4, seed=1)
    assert np.abs(cb.codebook.data).max() <= 1.0 / 64


def test_lookup_and_quantize_errors():
    cb = cbmod.Codebook(4, 2)
    with pytest.raises(IndexError):
        cbmod.lookup(np.array([4]), cb)
    with pytest.raises(TypeError):
        cbmod.lookup(np.array([0.5]), cb)
    with pytest.raises(ValueError):
        cbmod.quantize(np.zeros((3, 5)), cb)
    with pytest.raises(FloatingPointError):
        cbmod.quantize(np.array([[np.nan, 0.0]]), cb)
    with pytest.raises(ValueError):
        cbmod.nearest_indices(np.zeros((1, 2)), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        cbmod.Codebook(1, 2)


# -- VQ loss ------------------------------------------------------------------

def test_vq_loss_values():
    z = Tensor(np.array([[2.0, 0.0]]), requires_grad=True)
    zc = Tensor(np.array([[0.0, 0.0]]))
    assert float(cbmod.vq_loss(z, zc, 0.25).data) == pytest.approx(5.0)
    assert float(cbmod.vq_loss(zc, zc, 0.25).data) == 0.0


def test_vq_loss_batch_mean_of_per_image_sums():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((3, 2, 2, 4))
    zc = rng.standard_normal((3, 2, 2, 4))
    got = float(cbmod.vq_loss(Tensor(z), Tensor(zc), 0.25).data)
    assert got == pytest.approx(1.25 * ((z - zc) ** 2).sum() / 3)


def test_vq_loss_gradient_routing():
    rng = np.random.default_rng(2)
    cb = cbmod.Codebook(8, 4, seed=0)
    cb.codebook.data = rng.standard_normal((8, 4))
    z = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    s, zc = cbmod.quantize(z, cb)
    backward(cbmod.vq_loss(z, zc, 0.25))
    # encoder side sees only the commitment term
    np.testing.assert_allclose(z.grad, 2 * 0.25 * (z.data - cb.codebook.data[s]), atol=1e-12)
    # codebook side sees only the codebook term, and only at used rows
    expected = np.zeros((8, 4))
    np.add.at(expected, s, 2 * (cb.codebook.data[s] - z.data))
    np.testing.assert_allclose(cb.codebook.grad, expected, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_vq_loss_nonnegative(seed):
    rng = np.random.default_rng(seed)
    z, zc = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    assert float(cbmod.vq_loss(Tensor(z), Tensor(zc)).data) >= 0


def test_vq_loss_shape_mismatch():
    with pytest.raises(ValueError):
        cbmod.vq_loss(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


# -- straight-through ---------------------------------------------------------

def test_straight_through_forward_and_gradients():
    rng = np.random.default_rng(4)
    cb = cbmod.Codebook(8, 3, seed=0)
    z = Tensor(rng.standard_normal((2, 2, 2, 3)) * 0.01, requires_grad=True)
    s, zc = cbmod.quantize(z, cb)
    out = cbmod.straight_through(z, zc)
    assert out.data.tobytes() == zc.data.tobytes()
    backward(ops.sum(out))
    np.testing.assert_array_equal(z.grad, np.ones(z.shape))
    assert cb.codebook.grad is None


def test_straight_through_shape_mismatch():
    with pytest.raises(ValueError):
        cbmod.straight_through(Tensor(np.zeros(3)), Tensor(np.zeros(2)))


# -- usage statistics ---------------------------------------------------------

def test_stats_examples():
    one = cbmod.codebook_stats(cbmod.usage_histogram(np.zeros(50, dtype=int), 128))
    assert one.perplexity == pytest.approx(1.0)
    assert one.dead_codes == 127
    uniform = cbmod.codebook_stats(cbmod.usage_histogram(np.arange(128 * 3) % 128, 128))
    assert uniform.perplexity == pytest.approx(128.0)
    assert uniform.dead_codes == 0
    with pytest.raises(ValueError):
        cbmod.codebook_stats(np.zeros(4))


def test_stats_recomputed_from_histogram():
    s = np.random.default_rng(0).integers(0, 20, 300)
    st_ = cbmod.codebook_stats(cbmod.usage_histogram(s, 64))
    assert 1 < st_.perplexity <= 64
    assert st_.dead_codes == 64 - len(np.unique(s))


def test_restart_dead_codes():
    rng = np.random.default_rng(0)
    cb = cbmod.Codebook(6, 2, seed=0)
    before = cb.codebook.data.copy()
    usage = np.array([3, 0, 1, 0, 0, 2])
    pool = rng.standard_normal((10, 2)) * 5
    dead = cbmod.restart_dead_codes(cb, usage, pool, np.random.default_rng(1))
    np.testing.assert_array_equal(dead, [1, 3, 4])
    np.testing.assert_array_equal(cb.codebook.data[[0, 2, 5]], before[[0, 2, 5]])
    # every restarted code sits next to a pool vector
    for k in dead:
        assert np.min(np.linalg.norm(pool - cb.codebook.data[k], axis=1)) < 1.0
    assert cbmod.restart_dead_codes(cb, np.ones(6), pool, rng).size == 0
