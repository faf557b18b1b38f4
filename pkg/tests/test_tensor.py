"""Tests for the reverse-mode Tensor engine."""

import numpy as np
import pytest

from oracles import check_gradients
from vinet.tensor import Parameter, Tensor, backward


class TestConstruction:
    def test_coerces_to_float64(self):
        t = Tensor([1, 2, 3])
        assert t.data.dtype == np.float64
        assert t.shape == (3,)

    def test_scalar(self):
        t = Tensor(2.5)
        assert t.ndim == 0
        assert t.item() == 2.5

    def test_parameter_requires_grad(self):
        p = Parameter(np.zeros(3), name="w")
        assert p.requires_grad
        assert p.name == "w"

    def test_plain_tensor_does_not_require_grad(self):
        assert not Tensor([1.0]).requires_grad


class TestBackwardContract:
    def test_sum_gives_ones(self):
        x = Parameter(np.arange(6, dtype=float).reshape(2, 3))
        backward(x.sum())
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_square_sum(self):
        x = Parameter(np.array([1.0, 2.0]))
        backward((x * x).sum())
        assert np.allclose(x.grad, [2.0, 4.0])

    def test_repeated_backward_accumulates(self):
        x = Parameter(np.array([3.0]))
        backward(x.sum())
        backward(x.sum())
        assert np.array_equal(x.grad, [2.0])

    def test_non_scalar_loss_rejected(self):
        x = Parameter(np.ones(4))
        with pytest.raises(ValueError):
            backward(x * 2.0)

    def test_fan_out_accumulates(self):
        x = Parameter(np.array([2.0]))
        y = x * 3.0
        backward((y + y).sum())
        assert np.allclose(x.grad, [6.0])

    def test_no_history_without_requires_grad(self):
        a = Tensor([1.0, 2.0])
        b = a * 2.0
        assert b._parents == ()

    def test_zero_grad(self):
        x = Parameter(np.ones(2))
        backward(x.sum())
        x.zero_grad()
        assert x.grad is None


class TestArithmetic:
    def test_add_sub_mul_div_values(self):
        a = Tensor([1.0, 2.0])
        b = Tensor([3.0, 4.0])
        assert np.allclose((a + b).data, [4, 6])
        assert np.allclose((a - b).data, [-2, -2])
        assert np.allclose((a * b).data, [3, 8])
        assert np.allclose((a / b).data, [1 / 3, 0.5])
        assert np.allclose((2.0 - a).data, [1, 0])
        assert np.allclose((-a).data, [-1, -2])

    def test_pow_scalar_exponent(self):
        x = Parameter(np.array([2.0, 3.0]))
        backward((x**3).sum())
        assert np.allclose(x.grad, [12.0, 27.0])

    def test_exp_log(self):
        x = Parameter(np.array([0.5, 1.5]))
        backward((x.exp() + x.log()).sum())
        assert np.allclose(x.grad, np.exp([0.5, 1.5]) + 1.0 / np.array([0.5, 1.5]))

    def test_broadcast_grad_sums_down(self):
        a = Parameter(np.ones((2, 3)))
        b = Parameter(np.ones(3))
        backward((a * b).sum())
        assert a.grad.shape == (2, 3)
        assert b.grad.shape == (3,)
        assert np.allclose(b.grad, [2.0, 2.0, 2.0])

    def test_scalar_broadcast(self):
        a = Parameter(np.ones((2, 2)))
        s = Parameter(np.array(3.0))
        backward((a * s).sum())
        assert s.grad.shape == ()
        assert s.grad == 4.0


class TestShapes:
    def test_reshape_roundtrip_grad(self):
        x = Parameter(np.arange(6, dtype=float))
        backward((x.reshape(2, 3) * 2.0).sum())
        assert np.allclose(x.grad, 2.0 * np.ones(6))

    def test_getitem_scatter(self):
        x = Parameter(np.arange(5, dtype=float))
        backward((x[1:4] * 3.0).sum())
        assert np.allclose(x.grad, [0, 3, 3, 3, 0])

    def test_getitem_integer_array(self):
        x = Parameter(np.arange(4, dtype=float))
        idx = np.array([0, 0, 2])
        backward(x[idx].sum())
        assert np.allclose(x.grad, [2, 0, 1, 0])

    def test_sum_axis_keepdims(self):
        x = Parameter(np.ones((2, 3, 4)))
        y = x.sum(axis=(0, 2), keepdims=True)
        assert y.shape == (1, 3, 1)
        backward(y.sum())
        assert np.array_equal(x.grad, np.ones((2, 3, 4)))

    def test_mean(self):
        x = Parameter(np.arange(4, dtype=float).reshape(2, 2))
        backward(x.mean())
        assert np.allclose(x.grad, 0.25 * np.ones((2, 2)))

    def test_mean_axis(self):
        x = Parameter(np.ones((2, 3, 4, 4)))
        y = x.mean(axis=(2, 3))
        assert y.shape == (2, 3)
        backward(y.sum())
        assert np.allclose(x.grad, np.full((2, 3, 4, 4), 1.0 / 16))


class TestMatmul:
    def test_2d_value(self, rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        out = Tensor(a) @ Tensor(b)
        assert np.allclose(out.data, a @ b)

    def test_2d_grad_fd(self, rng):
        a = Parameter(rng.normal(size=(3, 4)))
        b = Parameter(rng.normal(size=(4, 2)))
        check_gradients(lambda: ((a @ b) ** 2).sum(), [a, b])

    def test_batched_grad_fd(self, rng):
        a = Parameter(rng.normal(size=(2, 3, 4)))
        b = Parameter(rng.normal(size=(2, 4, 2)))
        check_gradients(lambda: (a @ b).sum(), [a, b])

    def test_vector_cases(self, rng):
        m = Parameter(rng.normal(size=(3, 4)))
        v = Parameter(rng.normal(size=4))
        check_gradients(lambda: ((m @ v) ** 2).sum(), [m, v])


class TestComposite:
    @pytest.mark.parametrize("seed", range(5))
    def test_rational_expression_fd(self, seed):
        r = np.random.default_rng(seed)
        x = Parameter(r.normal(size=(3, 3)) + 3.0)
        y = Parameter(r.normal(size=(3, 3)) + 3.0)
        check_gradients(lambda: ((x * y + x / y).exp().log() * 0.5).sum(), [x, y])

    def test_determinism(self):
        def run():
            r = np.random.default_rng(7)
            x = Parameter(r.normal(size=(4, 4)))
            loss = ((x @ x) ** 2).mean()
            backward(loss)
            return loss.item(), x.grad.copy()

        l1, g1 = run()
        l2, g2 = run()
        assert l1 == l2
        assert np.array_equal(g1, g2)

    def test_detach_blocks_grad(self):
        x = Parameter(np.ones(3))
        y = x.detach() * 5.0
        assert y._parents == ()
