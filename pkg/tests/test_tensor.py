"""Autodiff core tests: op semantics, the broadcast rule, and tape behavior."""

import math

import numpy as np
import pytest

from mgn.tensor import Tensor, concat, grad_enabled, no_grad, softmax


def _t(data, grad=True, dtype=np.float32):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=grad)


# ---------------------------------------------------------------- arithmetic


def test_add_mul_forward_and_grad():
    a = _t([1.0, 2.0, 3.0])
    b = _t([4.0, 5.0, 6.0])
    y = (a * b + a).sum()
    assert y.item() == pytest.approx(1 * 4 + 2 * 5 + 3 * 6 + 6)
    y.backward()
    assert a.grad.tolist() == [5.0, 6.0, 7.0]  # b + 1
    assert b.grad.tolist() == [1.0, 2.0, 3.0]  # a


def test_sub_div_neg():
    a = _t([6.0, 8.0])
    b = _t([2.0, 4.0])
    y = ((a - b) / b - (-a)).sum()
    assert y.item() == pytest.approx((4 / 2 + 6) + (4 / 4 + 8))
    y.backward()
    assert np.allclose(a.grad, 1.0 / b.data + 1.0)
    assert np.allclose(b.grad, -a.data / b.data**2)


def test_python_scalar_operands():
    a = _t([2.0, 3.0])
    y = (1.0 + 2.0 * a - 1.0).sum()
    y.backward()
    assert np.allclose(a.grad, 2.0)
    z = (6.0 / _t([2.0, 3.0])).sum()
    assert z.item() == pytest.approx(3.0 + 2.0)


def test_pow_scalar_and_grad():
    a = _t([2.0, 3.0])
    y = (a**3).sum()
    y.backward()
    assert np.allclose(a.grad, 3 * a.data**2)
    with pytest.raises(ValueError):
        _t([-1.0]) ** 0.5


def test_pow_tensor_exponent():
    base = _t([2.0, 4.0])
    expo = _t([3.0, 0.5])
    y = (base**expo).sum()
    assert y.item() == pytest.approx(8.0 + 2.0)
    y.backward()
    assert np.allclose(base.grad, expo.data * base.data ** (expo.data - 1))
    assert np.allclose(expo.grad, base.data**expo.data * np.log(base.data))
    with pytest.raises(ValueError):
        _t([-2.0]) ** _t([2.0])


# ---------------------------------------------------------------- broadcast rule


def test_broadcast_appends_trailing_axes():
    # rank deficit is made up on the RIGHT: [2] against [2,2,2] acts per-channel
    chan = _t([2.0, 0.0])
    img = _t(np.ones((2, 2, 2)))
    y = chan * img
    assert np.array_equal(y.data[0], np.full((2, 2), 2.0))
    assert np.array_equal(y.data[1], np.zeros((2, 2)))
    y.sum().backward()
    assert chan.grad.tolist() == [4.0, 4.0]  # summed over the 2x2 map
    assert np.array_equal(img.grad[0], np.full((2, 2), 2.0))


def test_broadcast_singleton_axes_expand():
    a = _t(np.ones((2, 1, 3)))
    b = _t(np.full((2, 4, 1), 2.0))
    y = a + b
    assert y.data.shape == (2, 4, 3)
    y.sum().backward()
    assert np.array_equal(a.grad, np.full((2, 1, 3), 4.0))
    assert np.array_equal(b.grad, np.full((2, 4, 1), 3.0))


def test_broadcast_incompatible_raises():
    with pytest.raises(ValueError):
        _t(np.ones((2, 3))) + _t(np.ones((3, 2)))


# ---------------------------------------------------------------- unary ops


def test_unary_forward_values():
    x = np.array([-1.5, 0.0, 2.0], dtype=np.float32)
    t = _t(x)
    assert np.allclose(t.exp().data, np.exp(x))
    assert np.allclose(t.abs().data, np.abs(x))
    assert np.allclose(t.relu().data, np.maximum(x, 0))
    assert np.allclose(t.tanh().data, np.tanh(x))
    assert np.allclose(t.sigmoid().data, 1 / (1 + np.exp(-x)))
    assert np.allclose(t.softplus().data, np.log1p(np.exp(x)))
    assert np.allclose(_t([4.0, 9.0]).sqrt().data, [2.0, 3.0])


def test_unary_grads():
    x = np.array([-1.5, 0.5, 2.0], dtype=np.float64)
    for fn, dfn in [
        ("exp", lambda v: np.exp(v)),
        ("tanh", lambda v: 1 - np.tanh(v) ** 2),
        ("sigmoid", lambda v: (s := 1 / (1 + np.exp(-v))) * (1 - s)),
        ("softplus", lambda v: 1 / (1 + np.exp(-v))),
        ("abs", np.sign),
    ]:
        t = _t(x, dtype=np.float64)
        getattr(t, fn)().sum().backward()
        assert np.allclose(t.grad, dfn(x)), fn


def test_softplus_is_stable_for_large_inputs():
    t = _t([500.0, -500.0])
    with np.errstate(over="raise"):
        y = t.softplus()
    assert y.data[0] == pytest.approx(500.0)
    assert y.data[1] == pytest.approx(0.0, abs=1e-30)


def test_sigmoid_is_stable_for_large_negative():
    with np.errstate(over="raise"):
        y = _t([-500.0]).sigmoid()
    assert 0.0 <= y.data[0] < 1e-30


# ---------------------------------------------------------------- matmul


def test_matmul_2d_matches_triple_loop():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 5))
    expect = np.zeros((3, 5))
    for i in range(3):
        for j in range(5):
            for k in range(4):
                expect[i, j] += a[i, k] * b[k, j]
    got = _t(a, dtype=np.float64).matmul(_t(b, dtype=np.float64))
    assert np.allclose(got.data, expect, atol=1e-12)


def test_matmul_grads():
    a = _t(np.arange(6, dtype=np.float32).reshape(2, 3))
    b = _t(np.arange(12, dtype=np.float32).reshape(3, 4))
    (a @ b).sum().backward()
    g = np.ones((2, 4), dtype=np.float32)
    assert np.allclose(a.grad, g @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ g)


def test_matmul_batched_and_nd_by_2d():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((2, 3, 4)).astype(np.float32)
    b = rng.standard_normal((2, 4, 5)).astype(np.float32)
    y = _t(a) @ _t(b)
    assert np.allclose(y.data, a @ b, atol=1e-6)
    w = rng.standard_normal((4, 5)).astype(np.float32)
    y2 = _t(a) @ _t(w)
    assert np.allclose(y2.data, a @ w, atol=1e-6)


def test_matmul_shape_errors():
    with pytest.raises(ValueError):
        _t(np.ones(3)) @ _t(np.ones((3, 2)))
    with pytest.raises(ValueError):
        _t(np.ones((2, 3))) @ _t(np.ones((4, 2)))
    with pytest.raises(ValueError):
        _t(np.ones((2, 3, 4))) @ _t(np.ones((3, 4, 5)))


# ---------------------------------------------------------------- reductions


def test_sum_axes_and_keepdims():
    x = _t(np.arange(24, dtype=np.float32).reshape(2, 3, 4))
    assert x.sum().item() == pytest.approx(np.arange(24).sum())
    y = x.sum(axis=1, keepdims=True)
    assert y.data.shape == (2, 1, 4)
    y.sum().backward()
    assert np.array_equal(x.grad, np.ones((2, 3, 4), dtype=np.float32))


def test_reductions_accumulate_in_64_bit():
    # float32 running sums lose the small term here; 64-bit accumulation keeps it
    x = _t(np.array([1e8, 1.0, -1e8], dtype=np.float32))
    assert x.sum().item() == 1.0
    assert x.dtype == np.float32 and x.sum().dtype == np.float32


def test_mean_of_a_million_tenths():
    x = Tensor(np.full(10**6, 0.1, dtype=np.float32))
    assert abs(x.mean().item() - 0.1) < 1e-6


def test_mean_grad_scales_by_count():
    x = _t(np.ones((2, 5)))
    x.mean().backward()
    assert np.allclose(x.grad, 0.1)


# ---------------------------------------------------------------- shape ops


def test_reshape_transpose_t():
    x = _t(np.arange(6, dtype=np.float32).reshape(2, 3))
    assert x.reshape((3, 2)).data.shape == (3, 2)
    assert np.array_equal(x.transpose((1, 0)).data, x.data.T)
    assert np.array_equal(x.T.data, x.data.T)
    with pytest.raises(ValueError):
        _t(np.ones((2, 2, 2))).T
    y = x.reshape((6,)).sum()
    y.backward()
    assert x.grad.shape == (2, 3)


def test_expand_and_grad_sums_over_expanded():
    x = _t(np.array([[1.0], [2.0]]))
    y = x.expand((2, 3))
    assert np.array_equal(y.data, [[1, 1, 1], [2, 2, 2]])
    y.sum().backward()
    assert np.array_equal(x.grad, [[3.0], [3.0]])
    with pytest.raises(ValueError):
        x.expand((2, 3, 1))
    with pytest.raises(ValueError):
        x.expand((3, 3))


def test_narrow_forward_and_scatter_grad():
    x = _t(np.arange(8, dtype=np.float32).reshape(2, 4))
    y = x.narrow(1, 1, 2)
    assert np.array_equal(y.data, [[1, 2], [5, 6]])
    y.sum().backward()
    expect = np.zeros((2, 4), dtype=np.float32)
    expect[:, 1:3] = 1.0
    assert np.array_equal(x.grad, expect)
    with pytest.raises(ValueError):
        x.narrow(1, 3, 2)


def test_concat_forward_and_split_grad():
    a = _t(np.ones((2, 2)))
    b = _t(np.full((3, 2), 2.0))
    y = concat([a, b], axis=0)
    assert y.data.shape == (5, 2)
    (y * _t(np.arange(10, dtype=np.float32).reshape(5, 2), grad=False)).sum().backward()
    assert np.array_equal(a.grad, [[0, 1], [2, 3]])
    assert np.array_equal(b.grad, [[4, 5], [6, 7], [8, 9]])


# ---------------------------------------------------------------- softmax


def test_softmax_matches_independent_values():
    # exp([0,1,2]) / sum: denominators computed with python floats
    got = softmax(_t([1000.0, 1001.0, 1002.0], dtype=np.float64)).data
    e1, e2 = math.e, math.e**2
    denom = 1 + e1 + e2
    assert np.allclose(got, [1 / denom, e1 / denom, e2 / denom], atol=1e-15)
    assert got.sum() == pytest.approx(1.0, abs=1e-12)


def test_softmax_shift_invariance_and_rows():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 6))
    a = softmax(_t(x, dtype=np.float64), axis=-1).data
    b = softmax(_t(x + 123.0, dtype=np.float64), axis=-1).data
    assert np.allclose(a, b, atol=1e-12)
    assert np.allclose(a.sum(axis=-1), 1.0, atol=1e-12)


def test_softmax_grad_is_orthogonal_to_constant_shifts():
    # d softmax / dx applied to a constant vector of upstream grads is zero
    x = _t(np.array([0.3, -0.7, 1.1]), dtype=np.float64)
    softmax(x).sum().backward()
    assert np.allclose(x.grad, 0.0, atol=1e-12)


# ---------------------------------------------------------------- tape rules


def test_backward_requires_scalar():
    x = _t(np.ones(3))
    with pytest.raises(ValueError):
        (x * 2).backward()


def test_backward_outside_graph_raises():
    x = Tensor(np.ones(()))  # requires_grad defaults off
    with pytest.raises(RuntimeError):
        x.backward()


def test_stale_leaf_grads_raise():
    x = _t([1.0, 2.0])
    (x * 2).sum().backward()
    with pytest.raises(RuntimeError):
        (x * 3).sum().backward()
    x.zero_grad()
    (x * 3).sum().backward()
    assert np.allclose(x.grad, 3.0)


def test_no_grad_blocks_taping():
    x = _t([1.0])
    assert grad_enabled()
    with no_grad():
        assert not grad_enabled()
        y = x * 2
        with no_grad():
            pass
        assert not grad_enabled()  # nesting restores properly on exit
    assert grad_enabled()
    assert not y.requires_grad
    with pytest.raises(RuntimeError):
        y.backward()


def test_interior_grads_are_freed():
    x = _t([1.0, 2.0])
    h = x * 2
    y = (h * 3).sum()
    y.backward()
    assert h.grad is None and x.grad is not None


def test_grad_reuse_in_diamond_graph():
    x = _t([2.0])
    a = x * 3
    y = (a * a).sum()  # same interior node used twice
    y.backward()
    assert np.allclose(x.grad, 2 * 3 * (3 * 2.0))  # d/dx (3x)^2 = 18x


def test_float64_end_to_end():
    x = _t(np.ones((2, 2)), dtype=np.float64)
    w = _t(np.full((2, 2), 0.5), dtype=np.float64)
    y = (x @ w).tanh().mean()
    assert y.dtype == np.float64
    y.backward()
    assert x.grad.dtype == np.float64


def test_default_dtype_is_float32():
    assert Tensor([1.0, 2.0]).dtype == np.float32


def test_item_rejects_non_scalar():
    with pytest.raises(ValueError):
        _t([1.0, 2.0]).item()
