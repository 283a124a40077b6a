import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from botuq.engine import (
    Adam,
    OptimizerState,
    Tensor,
    backward,
    batch_norm,
    cosine_lr,
    exp,
    gaussian_sample,
    log,
    log_sigmoid,
    logsumexp,
    matmul,
    no_grad,
    reduce_mean,
    reduce_sum,
    selu,
    sigmoid,
    softplus,
    square,
    tanh,
)
from botuq.engine.gradcheck import check_gradients


def _param(rng, shape, name="p"):
    return Tensor(rng.normal(size=shape), True, name)


UNARY = [
    ("exp", exp),
    ("tanh", tanh),
    ("sigmoid", sigmoid),
    ("log_sigmoid", log_sigmoid),
    ("softplus", softplus),
    ("selu", selu),
    ("square", square),
]


@pytest.mark.parametrize("name,fn", UNARY)
def test_unary_gradients(name, fn):
    rng = np.random.default_rng(1)
    x = _param(rng, (4, 3))
    res = check_gradients(lambda: reduce_sum(fn(x) * fn(x)), [x])
    assert res.ok, res


def test_log_gradient_positive_domain():
    x = Tensor(np.array([0.3, 1.0, 4.5]), True)
    assert check_gradients(lambda: reduce_sum(log(x) * x), [x]).ok


def test_broadcast_and_matmul_gradients():
    rng = np.random.default_rng(2)
    a, w, b = _param(rng, (5, 3), "a"), _param(rng, (3, 2), "w"), _param(rng, (2,), "b")
    res = check_gradients(lambda: reduce_mean(tanh(matmul(a, w) + b) / (1.0 + square(b))), [a, w, b])
    assert res.ok, res


def test_logsumexp_matches_scipy_and_gradient():
    from scipy.special import logsumexp as ref

    rng = np.random.default_rng(3)
    x = _param(rng, (3, 6))
    out = logsumexp(x, axis=1)
    np.testing.assert_allclose(out.values, ref(x.values, axis=1), rtol=1e-14)
    assert check_gradients(lambda: reduce_sum(logsumexp(x * 3.0, axis=1)), [x]).ok


def test_getitem_scatter_and_transpose():
    rng = np.random.default_rng(4)
    x = _param(rng, (4, 3))
    idx = np.array([0, 2, 2, 3])
    assert check_gradients(lambda: reduce_sum(square(x[idx].T)), [x]).ok


def test_gaussian_sample_gradient():
    rng = np.random.default_rng(5)
    mu, ls = _param(rng, (3, 2)), _param(rng, (3, 2))
    eps = rng.standard_normal((3, 2))
    res = check_gradients(lambda: reduce_sum(square(gaussian_sample(mu, exp(ls * 0.5), eps))), [mu, ls])
    assert res.ok


def test_batch_norm_train_gradient_and_stats():
    rng = np.random.default_rng(6)
    x = _param(rng, (7, 3), "x")
    gamma = Tensor(rng.uniform(0.5, 1.5, 3), True, "gamma")
    beta = _param(rng, (3,), "beta")
    rm, rv = np.zeros(3), np.ones(3)

    def loss():
        return reduce_sum(tanh(batch_norm(x, gamma, beta, rm, rv, True, update_stats=False)) * np.arange(1.0, 22.0).reshape(7, 3))

    assert check_gradients(loss, [x, gamma, beta]).ok
    batch_norm(x, gamma, beta, rm, rv, True)
    np.testing.assert_allclose(rm, 0.1 * x.values.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.values.var(axis=0, ddof=1), rtol=1e-12)


def test_batch_norm_needs_two_rows_in_train_mode():
    x = Tensor(np.ones((1, 2)), True)
    with pytest.raises(ValueError):
        batch_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), np.zeros(2), np.ones(2), True)


def test_selu_constants():
    x = Tensor(np.array([-1.0, 0.0, 2.0]))
    lam, alpha = 1.0507009873554805, 1.6732632423543772
    np.testing.assert_allclose(selu(x).values, [lam * alpha * (math.exp(-1) - 1), 0.0, 2 * lam], rtol=1e-15)


def test_backward_frees_graph():
    x = Tensor(np.array([1.0, 2.0]), True)
    loss = reduce_sum(square(x))
    backward(loss)
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])
    with pytest.raises(RuntimeError):
        backward(loss)


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), True)
    with pytest.raises(ValueError):
        backward(square(x))


def test_shared_subexpression_accumulates():
    x = Tensor(np.array(3.0), True)
    y = x * x
    backward(y * y + y)  # x^4 + x^2
    assert x.grad == pytest.approx(4 * 27 + 6)


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(2), True)
    with no_grad():
        y = reduce_sum(square(x))
    assert not y.requires_grad


def test_numpy_on_left_stays_tensor():
    x = Tensor(np.ones(3), True)
    y = np.arange(3.0) * x
    assert isinstance(y, Tensor)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-30, 30)))
def test_log_sigmoid_stable_and_consistent(v):
    x = Tensor(v)
    ls = log_sigmoid(x).values
    assert np.all(np.isfinite(ls)) and np.all(ls <= 0)
    np.testing.assert_allclose(np.exp(ls), sigmoid(x).values, rtol=1e-12, atol=1e-300)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_random_composite_gradients(seed):
    rng = np.random.default_rng(seed)
    a, b = _param(rng, (3, 3), "a"), _param(rng, (3,), "b")
    res = check_gradients(lambda: reduce_mean(softplus(matmul(a, a) + b) * sigmoid(b)), [a, b])
    assert res.ok, res


# ---- optimizer ----------------------------------------------------------------

def test_cosine_schedule_endpoints():
    assert cosine_lr(0, 5e-4, 100) == pytest.approx(5e-4)
    assert cosine_lr(50, 5e-4, 100) == pytest.approx(2.5e-4)
    assert cosine_lr(100, 5e-4, 100, eta_min=1e-6) == pytest.approx(1e-6)
    with pytest.raises(ValueError):
        cosine_lr(0, 1e-3, 0)


def test_adam_first_step_moves_by_lr():
    p = Tensor(np.array([1.0, -2.0]), True)
    opt = Adam([p], OptimizerState(base_lr=0.1, t_max=10))
    p.grad = np.array([3.0, -0.5])
    opt.step()
    # bias-corrected first step is lr * g / |g| (up to eps)
    np.testing.assert_allclose(p.values, [0.9, -1.9], rtol=1e-7)


def test_adam_minimises_quadratic():
    p = Tensor(np.array([5.0, -3.0]), True)
    opt = Adam([p], OptimizerState(base_lr=0.1, t_max=2000, eta_min=0.1))
    for _ in range(2000):
        opt.zero_grad()
        backward(reduce_sum(square(p - np.array([1.0, 2.0]))))
        opt.step()
    np.testing.assert_allclose(p.values, [1.0, 2.0], atol=1e-3)


def test_adam_rejects_non_finite_gradient():
    p = Tensor(np.array([1.0]), True)
    opt = Adam([p], OptimizerState(base_lr=0.1, t_max=10))
    p.grad = np.array([np.nan])
    with pytest.raises(FloatingPointError):
        opt.step()
