import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scvq.tensor import (
    Adam,
    AdamState,
    NonFiniteError,
    Tensor,
    adam_step,
    backward,
    default_dtype,
    get_default_dtype,
    grad_check,
    no_grad,
    ops,
    stop_gradient,
)


def scalar(v):
    return Tensor(np.array(v, dtype=np.float64), requires_grad=True)


def test_square_derivative():
    x = scalar(3.0)
    backward(x * x)
    assert x.grad == pytest.approx(6.0)


def test_stop_gradient_blocks_one_path():
    x = scalar(3.0)
    backward(stop_gradient(x) * x)
    assert x.grad == pytest.approx(3.0)


def test_stop_gradient_forward_identity_and_zero_grad():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    y = stop_gradient(x)
    np.testing.assert_array_equal(y.data, x.data)
    # the only path is blocked, so the loss does not require grad
    loss = ops.sum(y)
    assert not loss.requires_grad
    backward(loss)
    assert x.grad is None


def test_softmax_cross_entropy_gradient_is_probs_minus_onehot():
    rng = np.random.default_rng(0)
    logits = Tensor(rng.standard_normal((5, 7)), requires_grad=True)
    target = rng.integers(0, 7, 5)
    backward(ops.sum(ops.cross_entropy(logits, target)))
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    expected = probs - np.eye(7)[target]
    np.testing.assert_allclose(logits.grad, expected, atol=1e-12)
    assert grad_check(lambda: ops.sum(ops.cross_entropy(logits, target)), logits) < 1e-6


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backward(x * 2.0)


def test_repeated_backward_without_reset_errors():
    x = scalar(2.0)
    y = x * x
    backward(y)
    with pytest.raises(RuntimeError):
        backward(x * x)
    x.grad = None
    backward(x * x)
    assert x.grad == pytest.approx(4.0)


def test_backward_without_grad_leaves_is_noop():
    a = Tensor(np.ones(3))
    b = Tensor(np.full(3, 2.0))
    loss = ops.sum(a * b)
    backward(loss)
    assert a.grad is None and b.grad is None


def test_non_finite_gradient_is_surfaced():
    # d/dx sqrt(x) is infinite at 0
    x = Tensor(np.array([0.0, 1.0]), requires_grad=True)
    with np.errstate(divide="ignore"):
        loss = ops.sum(ops.power(x, 0.5))
        with pytest.raises(NonFiniteError):
            backward(loss)


def test_grad_shape_matches_after_backward():
    rng = np.random.default_rng(1)
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4,)), requires_grad=True)
    backward(ops.sum(ops.tanh(a + b)))
    assert a.grad.shape == a.shape and b.grad.shape == b.shape


def test_no_grad_builds_no_graph():
    x = scalar(1.0)
    with no_grad():
        y = x * x
    assert not y.requires_grad


def test_default_dtype_context():
    # the default applies to non-float input; float arrays keep their dtype
    assert get_default_dtype() == np.float64
    with default_dtype(np.float32):
        assert Tensor([1, 2]).dtype == np.float32
        assert Tensor(np.ones(2)).dtype == np.float64
    assert Tensor([1, 2]).dtype == np.float64


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 9), st.integers(0, 2 ** 31 - 1))
def test_softmax_rows_are_distributions(rows, cols, seed):
    x = np.random.default_rng(seed).standard_normal((rows, cols)) * 10
    p = ops.softmax(Tensor(x)).data
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)


def test_replay_is_bit_identical():
    def run():
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((2, 6, 6, 3)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 3, 3, 4)), requires_grad=True)
        y = ops.group_norm(ops.conv2d(x, w, None, 1, 1), 2, Tensor(np.ones(4)), Tensor(np.zeros(4)))
        loss = ops.mean(ops.gelu(y))
        backward(loss)
        return loss.data.tobytes(), x.grad.tobytes(), w.grad.tobytes()
    assert run() == run()


# -- grad_check ---------------------------------------------------------------

def test_grad_check_sum_of_squares():
    x = Tensor(np.random.default_rng(0).standard_normal(10))
    assert grad_check(lambda: ops.sum(x * x), x) < 1e-7


def test_grad_check_conv_then_mean():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((1, 8, 8, 3)))
    w = Tensor(rng.standard_normal((3, 3, 3, 2)), requires_grad=True)
    # a plain mean of a linear map has constant gradient; square it to make it input dependent
    assert grad_check(lambda: ops.mean(ops.square(ops.conv2d(x, w, None, 1, 1))), x, others=(w,)) < 1e-4


@pytest.mark.parametrize("eps", [0.0, -1e-5, 0.1])
def test_grad_check_rejects_bad_eps(eps):
    x = Tensor(np.ones(2))
    with pytest.raises(ValueError):
        grad_check(lambda: ops.sum(x), x, eps)


def test_grad_check_reports_unevaluable_function():
    x = Tensor(np.array([1e-7, 1.0]))
    with np.errstate(invalid="ignore"):
        with pytest.raises(FloatingPointError):
            grad_check(lambda: ops.sum(ops.log(x)), x, eps=1e-5)


# -- Adam -----------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    st_ = AdamState(lr=0.1)
    adam_step([p], [np.zeros(2)], st_)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert st_.step == 1


def test_adam_first_step_moves_by_lr():
    p = Tensor(np.array([0.0]), requires_grad=True)
    adam_step([p], [np.array([0.37])], AdamState(lr=1e-3))
    # bias-corrected first step: lr * g / (|g| + eps)
    assert p.data[0] == pytest.approx(-1e-3 * 0.37 / (0.37 + 1e-8), rel=1e-12)


def test_adam_constant_gradient_steps_shrink_bias_effect():
    p = Tensor(np.array([0.0]), requires_grad=True)
    st_ = AdamState(lr=1e-2)
    moves = []
    for _ in range(3):
        before = p.data[0]
        adam_step([p], [np.array([2.0])], st_)
        moves.append(before - p.data[0])
    # with a constant gradient the corrected ratio m/sqrt(v) stays 1: every step is lr
    np.testing.assert_allclose(moves, 1e-2, rtol=1e-6)
    assert st_.step == 3


def test_adam_lr_zero_is_exact_noop():
    rng = np.random.default_rng(0)
    p = Tensor(rng.standard_normal(5), requires_grad=True)
    before = p.data.copy()
    adam_step([p], [rng.standard_normal(5)], AdamState(lr=0.0))
    np.testing.assert_array_equal(p.data, before)


def test_adam_errors():
    p = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ValueError):
        adam_step([p], [np.zeros(2)], AdamState(lr=1e-3))
    with pytest.raises(NonFiniteError):
        adam_step([p], [np.array([0.0, math.nan, 0.0])], AdamState(lr=1e-3))
    with pytest.raises(ValueError):
        AdamState(lr=-1.0)


def test_adam_wrapper_uses_param_grads():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([p], lr=0.5)
    backward(ops.sum(p * p))
    opt.step()
    assert p.data[0] == pytest.approx(0.5, rel=1e-6)
    opt.zero_grad()
    assert p.grad is None
