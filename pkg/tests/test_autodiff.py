"""Reverse-mode engine: every primitive against central differences."""

import numpy as np
import pytest

from spanner.errors import SpannerError
from spanner.nn.autodiff import Tensor, backward, dropout, log_softmax, softmax


def numeric_grad(f, x, h=1e-6):
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f()
        flat[i] = keep - h
        down = f()
        flat[i] = keep
        out[i] = (up - down) / (2 * h)
    return grad


def check(build, *shapes, seed=0):
    """build(*tensors) -> scalar Tensor; compares grads for every input."""
    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal(shape) * 0.7 + 0.1 for shape in shapes]
    tensors = [Tensor(a) for a in arrays]
    loss = build(*tensors)
    grads = backward(loss, {str(i): t for i, t in enumerate(tensors)})
    for i, array in enumerate(arrays):
        numeric = numeric_grad(lambda: float(build(*[Tensor(a) for a in arrays]).data), array)
        np.testing.assert_allclose(grads[str(i)], numeric, rtol=1e-5, atol=1e-7)


def test_add_mul_sub_div():
    check(lambda a, b: ((a + b) * (a - b) / (b * b + 2.0)).sum(), (3, 4), (3, 4))


def test_broadcast_add_and_mul():
    check(lambda a, b: ((a + b) * b).sum(), (3, 4), (4,))
    check(lambda a, b: (a * b).sum(), (2, 3, 4), (1, 4))


def test_scalar_operands():
    check(lambda a: (2.0 * a + 1.0).sum(), (5,))
    check(lambda a: (1.0 / (a * a + 1.0)).sum(), (5,))


def test_pow():
    check(lambda a: ((a * a + 1.0) ** 1.5).sum(), (4,))
    check(lambda a: ((a * a + 0.5) ** -0.5).sum(), (4,))


def test_matmul_2d():
    check(lambda a, b: (a @ b).sum(), (3, 4), (4, 2))


def test_matmul_batched_with_broadcast():
    check(lambda a, b: (a @ b).sum(), (2, 3, 4), (2, 4, 2))
    check(lambda a, b: (a @ b).sum(), (2, 3, 4), (4, 2))


def test_elementwise_nonlinearities():
    check(lambda a: a.exp().sum(), (3, 3))
    check(lambda a: (a * a + 0.5).log().sum(), (3, 3))
    check(lambda a: a.tanh().sum(), (3, 3))
    check(lambda a: a.sigmoid().sum(), (3, 3))
    check(lambda a: a.gelu().sum(), (3, 3))


def test_reductions():
    check(lambda a: a.sum(), (3, 4))
    check(lambda a: a.sum(axis=0).sum(), (3, 4))
    check(lambda a: a.sum(axis=1, keepdims=True).sum(), (3, 4))
    check(lambda a: a.mean(axis=-1).sum(), (3, 4))
    check(lambda a: a.mean(), (3, 4))


def test_shape_ops():
    check(lambda a: (a.reshape(2, 6) @ np.ones((6, 1))).sum(), (3, 4))
    check(lambda a: a.swapaxes(0, 1).sum(axis=0).mean(), (3, 4))
    check(lambda a: (a.transpose(1, 0, 2) * 2.0).sum(), (2, 3, 4))


def test_getitem_int_slice_and_fancy():
    check(lambda a: a[1].sum(), (3, 4))
    check(lambda a: a[1:3].sum(), (4, 2))
    check(lambda a: a[np.array([0, 2, 2])].sum(), (3, 4))
    rows, cols = np.array([0, 1, 2]), np.array([1, 0, 3])
    check(lambda a: a[(rows, cols)].sum(), (3, 4))


def test_repeated_fancy_index_accumulates():
    x = Tensor(np.ones(3))
    loss = x[np.array([0, 0, 1])].sum()
    grads = backward(loss, {"x": x})
    np.testing.assert_array_equal(grads["x"], [2.0, 1.0, 0.0])


def test_softmax_and_log_softmax():
    check(lambda a: (softmax(a, axis=-1) * np.arange(4.0)).sum(), (3, 4))
    check(lambda a: log_softmax(a, axis=-1)[(np.arange(3), np.array([1, 2, 0]))].sum(), (3, 4))


def test_softmax_rows_normalized():
    rng = np.random.default_rng(3)
    out = softmax(Tensor(rng.standard_normal((5, 7)) * 10), axis=-1).data
    assert (out >= 0).all()
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, rtol=1e-6)


def test_diamond_graph_accumulates():
    x = Tensor(np.array(2.0))
    y = x * x + x * 3.0  # dy/dx = 2x + 3 = 7
    grads = backward(y, {"x": x})
    assert grads["x"] == pytest.approx(7.0)


def test_backward_twice_raises():
    x = Tensor(np.array(2.0))
    loss = x * x
    backward(loss, {"x": x})
    with pytest.raises(SpannerError):
        backward(loss, {"x": x})


def test_unreached_leaf_gets_zeros():
    x = Tensor(np.array([1.0, 2.0]))
    other = Tensor(np.array([[3.0]]))
    grads = backward(x.sum(), {"x": x, "other": other})
    np.testing.assert_array_equal(grads["other"], np.zeros((1, 1)))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3))
    with pytest.raises(SpannerError):
        backward(x + 1.0, {"x": x})


def test_grads_cleared_after_backward():
    x = Tensor(np.array(1.5))
    backward(x * x, {"x": x})
    assert x.grad is None
    grads = backward(x * 4.0, {"x": x})
    assert grads["x"] == pytest.approx(4.0)


def test_dropout_zero_rate_is_identity_and_scaling_preserves_mean():
    x = Tensor(np.ones((100, 10)))
    assert dropout(x, 0.0, np.random.default_rng(0)) is x
    dropped = dropout(x, 0.25, np.random.default_rng(0)).data
    assert set(np.unique(dropped)) <= {0.0, 1.0 / 0.75}
    assert abs(dropped.mean() - 1.0) < 0.05


def test_deep_graph_does_not_hit_recursion_limit():
    x = Tensor(np.array(1.0))
    y = x
    for _ in range(5000):
        y = y + 1.0
    grads = backward(y, {"x": x})
    assert grads["x"] == pytest.approx(1.0)


def test_float32_graphs_stay_float32():
    a = Tensor(np.ones((2, 2), dtype=np.float32))
    out = ((a * 2.0 + 1.0) @ a).gelu().sum()
    assert out.dtype == np.float32
