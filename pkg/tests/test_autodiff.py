import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from afalora import autodiff as ad
from afalora.autodiff import (NonFiniteError, ShapeError, Tape, TapeError, Tensor, backward,
                              finite_diff_grad)


def leaf(v):
    return Tensor(np.array(v, dtype=float), requires_grad=True)


class TestForward:
    def test_identity_matmul(self):
        out = ad.matmul(Tensor(np.eye(2)), Tensor([[3], [4]]))
        np.testing.assert_array_equal(out.values, [[3], [4]])

    def test_hand_matmul(self):
        out = ad.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[5], [6]]))
        np.testing.assert_array_equal(out.values, [[17], [39]])

    def test_zero_matmul(self):
        rng = np.random.default_rng(0)
        out = ad.matmul(Tensor(np.zeros((3, 4))), Tensor(rng.standard_normal((4, 5))))
        assert not out.values.any()

    def test_add_zero_and_scale_one(self):
        X = Tensor(np.random.default_rng(1).standard_normal((3, 2)))
        np.testing.assert_array_equal(ad.add(X, Tensor(np.zeros((3, 2)))).values, X.values)
        np.testing.assert_array_equal(ad.add(X, Tensor(0.0)).values, X.values)
        np.testing.assert_array_equal(ad.scale(X, 1.0).values, X.values)

    def test_relu_elementwise(self):
        np.testing.assert_array_equal(ad.relu(Tensor([[-1, 2]])).values, [[0, 2]])

    def test_bias_broadcast(self):
        out = ad.add(Tensor(np.zeros((2, 3))), Tensor([[1], [2]]))
        np.testing.assert_array_equal(out.values, [[1, 1, 1], [2, 2, 2]])

    def test_tensors_are_2d(self):
        assert Tensor(3.0).shape == (1, 1)
        assert Tensor([1.0, 2.0]).shape == (2, 1)


class TestErrors:
    def test_matmul_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_add_mismatch(self):
        with pytest.raises(ShapeError):
            ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))

    def test_non_finite_output(self):
        with pytest.raises(NonFiniteError):
            ad.elementwise(Tensor([[1.0]]), lambda v: v * np.inf, lambda v: v)

    def test_non_scalar_loss(self):
        a = leaf([[1.0, 2.0]])
        with Tape():
            out = ad.scale(a, 2.0)
        with pytest.raises(ShapeError):
            backward(out)

    def test_detached_loss(self):
        with pytest.raises(TapeError, match="detached"):
            backward(ad.sum_all(Tensor([[1.0]])))

    def test_double_backward_is_an_error(self):
        a = leaf([[2.0]])
        with Tape():
            loss = ad.sum_all(ad.mul(a, a))
        backward(loss)
        assert a.grad[0, 0] == 4.0
        with pytest.raises(TapeError):
            backward(loss)
        assert a.grad[0, 0] == 4.0

    def test_fd_requires_positive_h(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda x: ad.sum_all(x), Tensor([[1.0]]), h=0.0)

    def test_fd_non_finite(self):
        with pytest.raises(NonFiniteError):
            finite_diff_grad(lambda x: float("nan"), Tensor([[1.0]]))


class TestBackward:
    def test_sum_of_linear_map(self):
        W = Tensor(np.eye(2))
        x = leaf([[1.0], [2.0]])
        with Tape():
            loss = ad.sum_all(ad.matmul(W, x))
        backward(loss)
        np.testing.assert_array_equal(x.grad, [[1.0], [1.0]])

    def test_relu_dead_region(self):
        a, b = leaf([[2.0]]), leaf([[-3.0]])
        with Tape():
            loss = ad.relu(ad.mul(a, b))
        backward(loss)
        assert a.grad[0, 0] == 0.0 and b.grad[0, 0] == 0.0

    def test_relu_live_region(self):
        a, b = leaf([[2.0]]), leaf([[3.0]])
        with Tape():
            loss = ad.relu(ad.mul(a, b))
        backward(loss)
        assert a.grad[0, 0] == 3.0 and b.grad[0, 0] == 2.0

    def test_relu_gradient_at_zero_is_zero(self):
        a = leaf([[0.0]])
        with Tape():
            loss = ad.sum_all(ad.relu(a))
        backward(loss)
        assert a.grad[0, 0] == 0.0

    def test_grads_accumulate(self):
        a = leaf([[1.0]])
        for _ in range(2):
            with Tape():
                loss = ad.scale(ad.sum_all(a), 3.0)
            backward(loss)
        assert a.grad[0, 0] == 6.0
        a.zero_grad()
        assert a.grad[0, 0] == 0.0

    def test_reused_input(self):
        x = leaf([[1.5, -2.0]])
        with Tape():
            loss = ad.sum_all(ad.add(ad.mul(x, x), x))
        backward(loss)
        np.testing.assert_allclose(x.grad, 2 * x.values + 1)

    def test_no_recording_outside_tape(self):
        a = leaf([[1.0]])
        out = ad.scale(a, 2.0)
        assert out.tape_id is None

    def test_matmul_gradients(self):
        rng = np.random.default_rng(3)
        A, B = leaf(rng.standard_normal((3, 4))), leaf(rng.standard_normal((4, 2)))
        G = rng.standard_normal((3, 2))
        with Tape():
            loss = ad.sum_all(ad.mul(ad.matmul(A, B), Tensor(G)))
        backward(loss)
        np.testing.assert_allclose(A.grad, G @ B.values.T, rtol=1e-12)
        np.testing.assert_allclose(B.grad, A.values.T @ G, rtol=1e-12)

    def test_cross_entropy_against_closed_form(self):
        rng = np.random.default_rng(4)
        logits = leaf(rng.standard_normal((5, 7)))
        labels = rng.integers(0, 5, size=7)
        with Tape():
            loss = ad.softmax_cross_entropy(logits, labels)
        backward(loss)
        z = logits.values
        p = np.exp(z) / np.exp(z).sum(axis=0)
        expected = -np.log(p[labels, np.arange(7)]).mean()
        assert loss.item() == pytest.approx(expected, rel=1e-12)
        onehot = np.zeros_like(z)
        onehot[labels, np.arange(7)] = 1
        np.testing.assert_allclose(logits.grad, (p - onehot) / 7, atol=1e-14)


class TestFiniteDiff:
    def test_square(self):
        g = finite_diff_grad(lambda x: ad.sum_all(ad.mul(x, x)), Tensor([[3.0]]))
        assert abs(g.values[0, 0] - 6.0) < 1e-6

    def test_constant(self):
        g = finite_diff_grad(lambda x: 7.0, Tensor(np.ones((2, 3))))
        assert not g.values.any()

    def test_sum_is_all_ones(self):
        x = Tensor(np.random.default_rng(5).standard_normal((3, 3)))
        g = finite_diff_grad(lambda t: ad.sum_all(t), x)
        np.testing.assert_allclose(g.values, 1.0, atol=1e-8)

    def test_input_restored(self):
        x = Tensor([[1.0, 2.0]])
        finite_diff_grad(lambda t: ad.sum_all(ad.mul(t, t)), x)
        np.testing.assert_array_equal(x.values, [[1.0, 2.0]])


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12)


mats = arrays(np.float64, (3, 4), elements=st.floats(-2, 2, allow_nan=False, width=64))


@settings(max_examples=40, deadline=None)
@given(W=mats, X=arrays(np.float64, (4, 5), elements=st.floats(-2, 2, width=64)),
       c=st.floats(0.1, 3.0))
def test_composite_gradient_matches_finite_difference(W, X, c):
    x = Tensor(X)

    def f(w):
        h = ad.matmul(w, x)
        h = ad.elementwise(h, np.tanh, lambda v: 1 - np.tanh(v) ** 2)
        return ad.add(ad.scale(ad.mean_all(ad.mul(h, h)), c), ad.sum_all(ad.col_norm(w)))

    w = Tensor(W, requires_grad=True)
    with Tape():
        loss = f(w)
    backward(loss)
    num = finite_diff_grad(f, Tensor(W.copy()))
    # col_norm is not differentiable at a zero column
    if (np.linalg.norm(W, axis=0) > 1e-3).all():
        assert rel_err(w.grad, num.values) < 1e-5


@settings(max_examples=30, deadline=None)
@given(X=arrays(np.float64, (3, 4), elements=st.floats(-3, 3, width=64)))
def test_relu_gradient_away_from_kink(X):
    h = 1e-5
    w = Tensor(X, requires_grad=True)
    with Tape():
        loss = ad.sum_all(ad.mul(ad.relu(w), ad.relu(w)))
    backward(loss)
    num = finite_diff_grad(lambda t: ad.sum_all(ad.mul(ad.relu(t), ad.relu(t))), Tensor(X.copy()))
    live = np.abs(X) >= 10 * h
    np.testing.assert_allclose(w.grad[live], num.values[live], rtol=1e-5, atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(A=mats, B=arrays(np.float64, (3, 1), elements=st.floats(0.5, 2, width=64)))
def test_division_and_broadcast_gradients(A, B):
    b = Tensor(B, requires_grad=True)

    def f(t):
        return ad.sum_all(ad.mul(ad.div(Tensor(A), t), Tensor(A)))

    with Tape():
        loss = f(b)
    backward(loss)
    assert rel_err(b.grad, finite_diff_grad(f, Tensor(B.copy())).values) < 1e-5


def test_determinism():
    rng = np.random.default_rng(7)
    W, X = rng.standard_normal((4, 4)), rng.standard_normal((4, 8))

    def run():
        w = Tensor(W.copy(), requires_grad=True)
        with Tape():
            loss = ad.mse(ad.relu(ad.matmul(w, Tensor(X))), np.zeros((4, 8)))
        backward(loss)
        return loss.item(), w.grad.tobytes()

    assert run() == run()


def test_float32_mode():
    w = Tensor(np.ones((2, 2)), requires_grad=True, dtype=np.float32)
    with Tape():
        loss = ad.sum_all(ad.mul(w, w))
    backward(loss)
    assert w.grad.dtype == np.float32
    np.testing.assert_allclose(w.grad, 2.0, rtol=1e-6)
