import numpy as np
import pytest

from serlct import functional as F
from serlct.tensor import ConfigError, ShapeError, Tensor, no_grad

from conftest import gradcheck, weighted_sum


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def test_shape_and_grad_invariants(rng):
    x = leaf(rng.normal(size=(2, 3)))
    assert x.size == 6 and x.shape == (2, 3)
    (x * 2.0).sum().backward()
    assert x.grad.shape == x.shape
    np.testing.assert_array_equal(x.grad, np.full((2, 3), 2.0))


def test_unreachable_leaf_grad_is_zero(rng):
    a, b = leaf(rng.normal(size=3)), leaf(rng.normal(size=3))
    _ = b * 3.0
    (a * a).sum().backward()
    np.testing.assert_array_equal(b.grad, np.zeros(3))


def test_grad_accumulates_over_shared_use():
    a = leaf([1.0, 2.0])
    (a * a + a).sum().backward()
    np.testing.assert_array_equal(a.grad, [3.0, 5.0])


def test_backward_requires_scalar():
    with pytest.raises(ShapeError):
        (leaf([1.0, 2.0]) * 2.0).backward()


def test_no_grad_builds_no_graph():
    a = leaf([1.0])
    with no_grad():
        y = a * 2.0
    assert y._parents == ()


def test_broadcast_gradients_reduce(rng):
    a = leaf(rng.normal(size=(4, 3)))
    b = leaf(rng.normal(size=(3,)))
    w = rng.normal(size=(4, 3))
    assert gradcheck(lambda: weighted_sum(a * b + b / (a * a + 1.0), w), [a, b]) < 1e-8


@pytest.mark.parametrize("fn", [F.exp, F.tanh, F.sigmoid, F.hardswish, F.relu, lambda t: F.log(t * t + 1.0)])
def test_elementwise_gradients(fn, rng):
    x = leaf(rng.normal(size=(3, 5)) * 2.0)
    w = rng.normal(size=(3, 5))
    assert gradcheck(lambda: weighted_sum(fn(x), w), [x]) < 1e-7


def test_hardswish_values():
    x = Tensor(np.array([-4.0, -3.0, 0.0, 1.5, 3.0, 5.0]))
    np.testing.assert_allclose(F.hardswish(x).data, [0.0, 0.0, 0.0, 1.5 * 4.5 / 6, 3.0, 5.0])


def test_shape_ops_gradients(rng):
    x = leaf(rng.normal(size=(2, 3, 4)))
    w = rng.normal(size=(4, 3, 2))
    loss = lambda: weighted_sum(F.transpose(F.reshape(x, (2, 12)), (1, 0)).reshape(4, 3, 2), w)
    assert gradcheck(loss, [x]) < 1e-8
    y = leaf(rng.normal(size=(2, 5)))
    w2 = rng.normal(size=(2, 7))
    assert gradcheck(lambda: weighted_sum(F.concat([x[:, 0, :2], y], axis=1), w2), [x, y]) < 1e-8


def test_fancy_index_gradient_accumulates():
    x = leaf([1.0, 2.0, 3.0])
    x[np.array([0, 0, 2])].sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, 0.0, 1.0])


def test_softmax_rows_sum_to_one(rng):
    z = Tensor(rng.normal(size=(5, 7)) * 50)
    np.testing.assert_allclose(F.softmax(z, -1).data.sum(-1), 1.0, atol=1e-12)
    ls = F.log_softmax(z, -1).data
    np.testing.assert_allclose(np.exp(ls).sum(-1), 1.0, atol=1e-12)


def test_soft_cross_entropy_matches_formula(rng):
    z = leaf(rng.normal(size=(4, 3)))
    y = rng.dirichlet(np.ones(3), size=4)
    expected = -(y * (z.data - np.log(np.exp(z.data).sum(1, keepdims=True)))).sum(1).mean()
    assert F.soft_cross_entropy(z, y).item() == pytest.approx(expected, rel=1e-12)
    assert gradcheck(lambda: F.soft_cross_entropy(z, y), [z]) < 1e-8


def test_matmul_batched_gradient(rng):
    a = leaf(rng.normal(size=(2, 3, 4)))
    b = leaf(rng.normal(size=(2, 4, 5)))
    w = rng.normal(size=(2, 3, 5))
    assert gradcheck(lambda: weighted_sum(a @ b, w), [a, b]) < 1e-8


def test_channel_shuffle_errors():
    with pytest.raises(ConfigError):
        F.channel_shuffle(Tensor(np.zeros((1, 6, 2, 2))), 4)
