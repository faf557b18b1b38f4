"""Tests for the differentiable layers against contract examples and oracles."""

import math

import numpy as np
import pytest

from oracles import (
    check_gradients,
    conv2d_bruteforce,
    cross_entropy_direct,
    linear_bruteforce,
    maxpool2d_bruteforce,
)
from vinet import nn
from vinet.tensor import Parameter, Tensor, backward


class TestConv2d:
    def test_scalar_product(self):
        out = nn.conv2d(Tensor([[[5.0]]]), Tensor([[[[2.0]]]]))
        assert out.shape == (1, 1, 1)
        assert out.data[0, 0, 0] == 10.0

    def test_paper_shape_16ch(self, rng):
        x = Tensor(rng.normal(size=(16, 64, 64)))
        w = Tensor(rng.normal(size=(1, 16, 3, 3)))
        assert nn.conv2d(x, w, stride=1, padding=1).shape == (1, 64, 64)

    def test_matches_bruteforce(self, rng):
        x = rng.normal(size=(2, 5, 5))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        got = nn.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, padding=1)
        assert np.allclose(got.data, conv2d_bruteforce(x, w, b, 1, 1), atol=1e-12)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 0), (2, 1), (3, 2)])
    def test_bruteforce_strides(self, rng, stride, padding):
        x = rng.normal(size=(3, 8, 7))
        w = rng.normal(size=(2, 3, 3, 3))
        got = nn.conv2d(Tensor(x), Tensor(w), None, stride, padding)
        want = conv2d_bruteforce(x, w, None, stride, padding)
        assert got.shape == want.shape
        assert np.allclose(got.data, want, atol=1e-12)

    def test_batched_matches_per_sample(self, rng):
        x = rng.normal(size=(4, 2, 6, 6))
        w = rng.normal(size=(3, 2, 3, 3))
        got = nn.conv2d(Tensor(x), Tensor(w), stride=2, padding=1)
        for i in range(4):
            assert np.allclose(got.data[i], conv2d_bruteforce(x[i], w, None, 2, 1), atol=1e-12)

    def test_channel_mismatch_raises(self):
        with pytest.raises(ValueError, match="channels"):
            nn.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))

    def test_kernel_too_large_raises(self):
        with pytest.raises(ValueError, match="exceeds"):
            nn.conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 5, 5))))

    @pytest.mark.parametrize("stride,padding", [(1, 1), (2, 0), (2, 1)])
    def test_grad_fd(self, rng, stride, padding):
        x = Parameter(rng.normal(size=(2, 2, 6, 6)))
        w = Parameter(rng.normal(size=(3, 2, 3, 3)))
        b = Parameter(rng.normal(size=3))
        check_gradients(lambda: (nn.conv2d(x, w, b, stride, padding) ** 2).sum(), [x, w, b])


class TestMaxPool2d:
    def test_single_window(self):
        out = nn.maxpool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), 2, 2)
        assert out.data.tolist() == [[[4.0]]]

    def test_constant_input(self):
        out = nn.maxpool2d(Tensor(np.full((1, 4, 4), 7.0)), 2, 2)
        assert np.all(out.data == 7.0)

    def test_matches_bruteforce(self, rng):
        x = rng.normal(size=(1, 6, 6))
        got = nn.maxpool2d(Tensor(x), 2, 2)
        assert np.array_equal(got.data, maxpool2d_bruteforce(x, 2, 2))

    @pytest.mark.parametrize("window,stride,hw", [(2, 2, 6), (3, 2, 7), (2, 1, 5), (3, 3, 9)])
    def test_bruteforce_configs(self, rng, window, stride, hw):
        x = rng.normal(size=(3, hw, hw))
        got = nn.maxpool2d(Tensor(x), window, stride)
        assert np.array_equal(got.data, maxpool2d_bruteforce(x, window, stride))

    def test_window_too_large(self):
        with pytest.raises(ValueError, match="window"):
            nn.maxpool2d(Tensor(np.ones((1, 2, 2))), 3, 1)

    def test_tie_gradient_goes_to_first(self):
        x = Parameter(np.full((1, 1, 2, 2), 5.0))
        backward(nn.maxpool2d(x, 2, 2).sum())
        assert np.array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_grad_fd(self, rng):
        # permutation values keep window maxima unique so FD sees no kinks
        vals = rng.permutation(2 * 36).astype(float).reshape(2, 1, 6, 6)
        x = Parameter(vals)
        check_gradients(lambda: (nn.maxpool2d(x, 2, 2) * 0.1).sum(), [x])

    def test_overlapping_stride_grad_fd(self, rng):
        vals = rng.permutation(25).astype(float).reshape(1, 1, 5, 5)
        x = Parameter(vals)
        check_gradients(lambda: (nn.maxpool2d(x, 3, 1) * 0.1).sum(), [x])


class TestReLU:
    def test_values(self):
        out = nn.relu(Tensor([-1.0, 0.0, 2.0]))
        assert out.data.tolist() == [0.0, 0.0, 2.0]

    def test_all_negative(self):
        assert np.all(nn.relu(Tensor(-np.ones((3, 3)))).data == 0.0)

    def test_gradient_indicator(self):
        x = Parameter(np.array([-1.0, 2.0]))
        backward(nn.relu(x).sum())
        assert np.array_equal(x.grad, [0.0, 1.0])

    def test_gradient_zero_at_zero(self):
        x = Parameter(np.array([0.0]))
        backward(nn.relu(x).sum())
        assert x.grad[0] == 0.0

    def test_grad_fd(self, rng):
        x = Parameter(rng.normal(size=(4, 4)) + np.sign(rng.normal(size=(4, 4))) * 0.5)
        x.data[np.abs(x.data) < 0.01] = 0.5  # keep FD probes away from the kink
        check_gradients(lambda: (nn.relu(x) ** 2).sum(), [x])


class TestBatchNorm2d:
    def _apply(self, x, gamma, beta, training=True, rm=None, rv=None):
        c = x.shape[1]
        rm = np.zeros(c) if rm is None else rm
        rv = np.ones(c) if rv is None else rv
        return nn.batchnorm2d(Tensor(x), Tensor(gamma), Tensor(beta), rm, rv, training)

    def test_symmetric_standardization(self):
        x = np.array([1.0, 3.0]).reshape(2, 1, 1, 1)
        out = self._apply(x, np.ones(1), np.zeros(1))
        assert np.allclose(out.data.ravel(), [-1.0, 1.0], atol=1e-2)

    def test_gamma_zero_gives_beta(self):
        x = np.random.default_rng(1).normal(size=(2, 3, 4, 4))
        out = self._apply(x, np.zeros(3), np.array([1.0, 2.0, 3.0]))
        for c in range(3):
            assert np.all(out.data[:, c] == float(c + 1))

    def test_output_moments(self, rng):
        x = rng.normal(loc=5.0, scale=3.0, size=(2, 3, 4, 4))
        out = self._apply(x, np.ones(3), np.zeros(3))
        assert np.allclose(out.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
        assert np.allclose(out.data.var(axis=(0, 2, 3)), 1.0, atol=1e-3)

    def test_running_stats_update(self, rng):
        x = rng.normal(loc=2.0, size=(4, 2, 3, 3))
        rm, rv = np.zeros(2), np.ones(2)
        self._apply(x, np.ones(2), np.zeros(2), training=True, rm=rm, rv=rv)
        mean = x.mean(axis=(0, 2, 3))
        m = 4 * 3 * 3
        var_unbiased = x.var(axis=(0, 2, 3)) * m / (m - 1)
        assert np.allclose(rm, 0.1 * mean)
        assert np.allclose(rv, 0.9 + 0.1 * var_unbiased)

    def test_eval_mode_uses_running_stats(self, rng):
        x = rng.normal(size=(2, 2, 3, 3))
        rm = np.array([1.0, -1.0])
        rv = np.array([4.0, 0.25])
        out = self._apply(x, np.ones(2), np.zeros(2), training=False, rm=rm, rv=rv)
        want = (x - rm[None, :, None, None]) / np.sqrt(rv[None, :, None, None] + 1e-5)
        assert np.allclose(out.data, want, atol=1e-12)
        assert np.array_equal(rm, [1.0, -1.0])  # eval never touches running stats

    def test_grad_fd_train(self, rng):
        x = Parameter(rng.normal(size=(3, 2, 4, 4)))
        g = Parameter(rng.uniform(0.5, 1.5, size=2))
        b = Parameter(rng.normal(size=2))
        rm, rv = np.zeros(2), np.ones(2)

        def loss():
            rm[:] = 0.0
            rv[:] = 1.0  # keep running stats fixed across FD evaluations
            return (nn.batchnorm2d(x, g, b, rm, rv, True) ** 2).sum()

        check_gradients(loss, [x, g, b])

    def test_grad_fd_eval(self, rng):
        x = Parameter(rng.normal(size=(2, 2, 3, 3)))
        g = Parameter(rng.uniform(0.5, 1.5, size=2))
        b = Parameter(rng.normal(size=2))
        rm = rng.normal(size=2)
        rv = rng.uniform(0.5, 2.0, size=2)
        check_gradients(lambda: (nn.batchnorm2d(x, g, b, rm, rv, False) ** 2).sum(), [x, g, b])


class TestLinear:
    def test_identity(self):
        x = Tensor([1.0, 2.0, 3.0])
        out = nn.linear(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
        assert np.array_equal(out.data, [1.0, 2.0, 3.0])

    def test_zero_weight_gives_bias(self):
        out = nn.linear(Tensor(np.ones(4)), Tensor(np.zeros((2, 4))), Tensor([5.0, -1.0]))
        assert np.array_equal(out.data, [5.0, -1.0])

    def test_matches_bruteforce(self, rng):
        x = rng.normal(size=3)
        w = rng.normal(size=(2, 3))
        b = rng.normal(size=2)
        got = nn.linear(Tensor(x), Tensor(w), Tensor(b))
        assert np.allclose(got.data, linear_bruteforce(x, w, b), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="fan-in"):
            nn.linear(Tensor(np.ones(3)), Tensor(np.ones((2, 4))))

    def test_grad_fd(self, rng):
        x = Parameter(rng.normal(size=(4, 3)))
        w = Parameter(rng.normal(size=(2, 3)))
        b = Parameter(rng.normal(size=2))
        check_gradients(lambda: (nn.linear(x, w, b) ** 2).sum(), [x, w, b])


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss = nn.softmax_cross_entropy(Tensor(np.zeros(5)), 2)
        assert abs(loss.item() - math.log(5)) < 1e-12

    def test_saturated(self):
        loss = nn.softmax_cross_entropy(Tensor([1000.0, 0.0]), 0)
        assert loss.item() < 1e-10

    def test_direct_evaluation(self):
        loss = nn.softmax_cross_entropy(Tensor([1.0, 2.0, 3.0]), 1)
        assert abs(loss.item() - cross_entropy_direct([1.0, 2.0, 3.0], 1)) < 1e-12

    def test_nonnegative_random(self, rng):
        for _ in range(50):
            logits = rng.normal(scale=5.0, size=6)
            label = int(rng.integers(6))
            assert nn.softmax_cross_entropy(Tensor(logits), label).item() >= 0.0

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="range"):
            nn.softmax_cross_entropy(Tensor(np.zeros(3)), 3)

    def test_gradient_is_softmax_minus_onehot(self, rng):
        logits = Parameter(rng.normal(size=4))
        backward(nn.softmax_cross_entropy(logits, 2))
        e = np.exp(logits.data - logits.data.max())
        p = e / e.sum()
        p[2] -= 1.0
        assert np.allclose(logits.grad, p, atol=1e-12)
        assert abs((logits.grad + np.eye(4)[2]).sum() - 1.0) < 1e-10  # softmax sums to 1

    def test_batch_mean_reduction(self, rng):
        logits = rng.normal(size=(3, 5))
        labels = [0, 4, 2]
        got = nn.softmax_cross_entropy(Tensor(logits), labels).item()
        want = sum(cross_entropy_direct(logits[i], labels[i]) for i in range(3)) / 3
        assert abs(got - want) < 1e-12

    def test_grad_fd(self, rng):
        logits = Parameter(rng.normal(size=(4, 5)))
        check_gradients(lambda: nn.softmax_cross_entropy(logits, [1, 0, 3, 2]), [logits])


class TestSGD:
    def test_definition(self):
        w = Parameter(np.array([1.0]))
        w.grad = np.array([0.5])
        nn.sgd_step([w], 0.1)
        assert np.allclose(w.data, [0.95])
        assert w.grad is None

    def test_zero_grad_no_change(self):
        w = Parameter(np.array([2.0]))
        w.grad = np.zeros(1)
        nn.sgd_step([w], 0.1)
        assert w.data[0] == 2.0

    def test_two_steps_equal_summed_gradients(self):
        w1 = Parameter(np.array([1.0]))
        w2 = Parameter(np.array([1.0]))
        for g in ([0.2], [0.3]):
            w1.grad = np.array(g)
            nn.sgd_step([w1], 0.1)
        w2.grad = np.array([0.5])
        nn.sgd_step([w2], 0.1)
        assert np.allclose(w1.data, w2.data)

    def test_missing_grad_raises(self):
        w = Parameter(np.ones(1), name="w")
        with pytest.raises(ValueError, match="w"):
            nn.sgd_step([w], 0.1)

    def test_optimizer_class(self, rng):
        lin = nn.Linear(3, 2, rng=rng)
        opt = nn.SGD(lin.parameters(), lr=0.01)
        loss = (lin(Tensor(rng.normal(size=(4, 3)))) ** 2).sum()
        before = loss.item()
        backward(loss)
        opt.step()
        after = (lin(Tensor(np.zeros((1, 3)))) ** 2).sum()  # params changed, grads cleared
        assert all(p.grad is None for p in lin.parameters())
        assert before > 0 and after.item() >= 0


class TestModuleSystem:
    def _tiny_model(self, rng):
        class Net(nn.Module):
            def __init__(self):
                super().__init__()
                self.conv = nn.Conv2d(1, 2, 3, padding=1, rng=rng)
                self.bn = nn.BatchNorm2d(2)
                self.head = nn.Linear(8, 3, rng=rng)
                self.stages = [nn.ReLU(), nn.MaxPool2d(2)]

            def forward(self, x):
                h = self.bn(self.conv(x))
                for s in self.stages:
                    h = s(h)
                return self.head(h.reshape(x.shape[0], 8))

        return Net()

    def test_named_parameters_paths(self, rng):
        net = nn.bind_parameter_names(self._tiny_model(rng))
        names = [n for n, _ in net.named_parameters()]
        assert "conv.weight" in names
        assert "bn.bias" in names
        assert "head.weight" in names
        assert len(names) == len(set(names))
        assert all(p.name == n for n, p in net.named_parameters())

    def test_named_buffers(self, rng):
        net = self._tiny_model(rng)
        buffers = dict(net.named_buffers())
        assert set(buffers) == {"bn.running_mean", "bn.running_var"}

    def test_train_eval_propagates(self, rng):
        net = self._tiny_model(rng)
        net.eval()
        assert not net.bn.training
        net.train()
        assert net.bn.training

    def test_forward_backward_smoke(self, rng):
        net = self._tiny_model(rng)
        x = Tensor(rng.normal(size=(2, 1, 4, 4)))
        loss = nn.softmax_cross_entropy(net(x), [0, 2])
        backward(loss)
        for _, p in net.named_parameters():
            assert p.grad is not None and p.grad.shape == p.shape

    def test_init_determinism(self):
        w1 = nn.Conv2d(2, 3, 3, rng=np.random.default_rng(5)).weight.data
        w2 = nn.Conv2d(2, 3, 3, rng=np.random.default_rng(5)).weight.data
        assert np.array_equal(w1, w2)

    def test_init_fan_in_bound(self):
        conv = nn.Conv2d(4, 8, 3, rng=np.random.default_rng(0))
        bound = 1.0 / math.sqrt(4 * 9)
        assert np.abs(conv.weight.data).max() <= bound
        assert np.all(conv.bias.data == 0.0)
