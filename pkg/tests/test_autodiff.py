"""Tensor engine: values, gradients, adjointness, accumulation semantics."""

import math

import numpy as np
import pytest

from polyrestore import autodiff as ad
from polyrestore.autodiff import TensorNode

from helpers import check_gradients, naive_conv2d, rand_node


class TestConv2d:
    def test_all_ones_sums_to_nine(self):
        x = TensorNode(np.ones((1, 1, 3, 3)))
        w = TensorNode(np.ones((1, 1, 3, 3)))
        out = ad.conv2d(x, w, stride=1, padding=0)
        assert out.shape == (1, 1, 1, 1)
        assert out.values[0, 0, 0, 0] == pytest.approx(9.0)

    def test_delta_kernel_is_identity(self):
        rng = np.random.default_rng(0)
        x = TensorNode(rng.standard_normal((2, 1, 6, 6)))
        w = np.zeros((1, 1, 3, 3), dtype=np.float32)
        w[0, 0, 1, 1] = 1.0
        out = ad.conv2d(x, TensorNode(w), stride=1, padding=1)
        np.testing.assert_allclose(out.values, x.values, atol=1e-6)

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1, 2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        for stride, padding in [(1, 0), (1, 1), (2, 1), (2, 0)]:
            got = ad.conv2d(TensorNode(x), TensorNode(w), TensorNode(b),
                            stride=stride, padding=padding)
            want = naive_conv2d(x, w, b, stride=stride, padding=padding)
            np.testing.assert_allclose(got.values, want, rtol=1e-5, atol=1e-6)

    def test_channel_mismatch_rejected(self):
        x = TensorNode(np.ones((1, 3, 4, 4)))
        w = TensorNode(np.ones((2, 2, 3, 3)))
        with pytest.raises(ValueError, match="channels"):
            ad.conv2d(x, w)

    def test_kernel_too_large_rejected(self):
        with pytest.raises(ValueError, match="fit"):
            ad.conv2d(TensorNode(np.ones((1, 1, 2, 2))), TensorNode(np.ones((1, 1, 5, 5))))


class TestTransposedConv2d:
    def test_stride1_delta_is_identity(self):
        rng = np.random.default_rng(2)
        x = TensorNode(rng.standard_normal((1, 1, 5, 5)))
        w = np.zeros((1, 1, 3, 3), dtype=np.float32)
        w[0, 0, 1, 1] = 1.0
        out = ad.transposed_conv2d(x, TensorNode(w), stride=1, padding=1)
        np.testing.assert_allclose(out.values, x.values, atol=1e-6)

    def test_stride2_broadcasts_single_value(self):
        v = 0.7
        x = TensorNode(np.full((1, 1, 1, 1), v))
        w = TensorNode(np.ones((1, 1, 2, 2)))
        out = ad.transposed_conv2d(x, w, stride=2, padding=0)
        assert out.shape == (1, 1, 2, 2)
        np.testing.assert_allclose(out.values, np.full((1, 1, 2, 2), v), rtol=1e-6)

    def test_output_size_formula(self):
        x = TensorNode(np.zeros((1, 2, 5, 5)))
        w = TensorNode(np.zeros((2, 3, 3, 3)))
        out = ad.transposed_conv2d(x, w, stride=2, padding=1, output_padding=1)
        assert out.shape == (1, 3, 10, 10)
        out = ad.transposed_conv2d(x, w, stride=2, padding=0)
        assert out.shape == (1, 3, 11, 11)

    def test_adjoint_of_conv2d(self):
        rng = np.random.default_rng(3)
        for seed in range(20):
            r = np.random.default_rng(seed)
            stride = int(r.integers(1, 3))
            padding = int(r.integers(0, 2))
            a = r.standard_normal((1, 2, 7, 7))
            w = r.standard_normal((3, 2, 3, 3))
            conv_a = ad.conv2d(TensorNode(a), TensorNode(w), stride=stride, padding=padding)
            b = r.standard_normal(conv_a.shape)
            # <conv(a), b> == <a, conv_T(b)> with the matching output_padding
            opad = (7 + 2 * padding - 3) % stride
            wt = TensorNode(np.ascontiguousarray(w.transpose(1, 0, 2, 3)))
            a_t = ad.transposed_conv2d(TensorNode(b), TensorNode(w), stride=stride,
                                       padding=padding, output_padding=opad)
            lhs = float((conv_a.values * b).sum())
            rhs = float((a * a_t.values).sum())
            assert abs(lhs - rhs) < 1e-5 * max(1.0, abs(lhs)), (seed, stride, padding)


class TestElementwisePower:
    def test_cube(self):
        out = ad.elementwise_power(TensorNode(np.array([0.5])), 3)
        assert out.values[0] == pytest.approx(0.125)

    def test_identity(self):
        x = TensorNode(np.array([1.5, -2.0]))
        np.testing.assert_array_equal(ad.elementwise_power(x, 1).values, x.values)

    def test_gradient_value(self):
        # d/dx x^3 at 0.5 is 0.75
        x = TensorNode(np.array([0.5]), requires_grad=True, dtype=np.float64)
        ad.reduce_sum(ad.elementwise_power(x, 3)).backward()
        assert x.grad[0] == pytest.approx(0.75, rel=1e-9)

    def test_zero_exponent_rejected(self):
        with pytest.raises(ValueError, match="1"):
            ad.elementwise_power(TensorNode(np.ones(3)), 0)


class TestActivations:
    def test_tanh_zero(self):
        assert ad.tanh(TensorNode(np.zeros(3))).values[0] == 0.0

    def test_softmax_equal_logits(self):
        out = ad.softmax(TensorNode(np.zeros((1, 2))), axis=-1)
        np.testing.assert_allclose(out.values, [[0.5, 0.5]])

    def test_softmax_rows_on_simplex(self):
        rng = np.random.default_rng(4)
        out = ad.softmax(TensorNode(rng.standard_normal((8, 5)) * 10), axis=-1)
        assert np.all(out.values >= 0)
        np.testing.assert_allclose(out.values.sum(axis=-1), np.ones(8), atol=1e-6)

    def test_leaky_relu_negative_slope(self):
        out = ad.leaky_relu(TensorNode(np.array([-2.0])), slope=0.2)
        assert out.values[0] == pytest.approx(-0.4)

    def test_sigmoid_extremes_stay_finite(self):
        out = ad.sigmoid(TensorNode(np.array([-1e4, 1e4])))
        assert np.all(np.isfinite(out.values))


class TestInstanceNorm:
    def _affine(self, c, gain=1.0, shift=0.0):
        return (TensorNode(np.full(c, gain, dtype=np.float64)),
                TensorNode(np.full(c, shift, dtype=np.float64)))

    def test_constant_channel_maps_to_zero(self):
        x = TensorNode(np.full((1, 2, 4, 4), 3.7))
        gain, shift = self._affine(2)
        out = ad.instance_norm(x, gain, shift)
        np.testing.assert_allclose(out.values, 0.0, atol=1e-2)

    def test_two_value_channel(self):
        x = TensorNode(np.array([[[[1.0, 3.0]]]]))
        gain, shift = self._affine(1)
        out = ad.instance_norm(x, gain, shift)
        np.testing.assert_allclose(out.values[0, 0, 0], [-1.0, 1.0], atol=1e-2)

    def test_idempotent_on_normalized_data(self):
        rng = np.random.default_rng(5)
        raw = rng.standard_normal((1, 1, 16, 16))
        raw = (raw - raw.mean()) / raw.std()
        gain, shift = self._affine(1)
        out = ad.instance_norm(TensorNode(raw), gain, shift)
        np.testing.assert_allclose(out.values, raw, atol=1e-4)


class TestLosses:
    def test_cross_entropy_perfect(self):
        c = TensorNode(np.array([[1.0, 0.0]]))
        p = TensorNode(np.array([[1.0, 0.0]]))
        assert float(ad.cross_entropy(c, p).values) == pytest.approx(0.0, abs=1e-6)

    def test_cross_entropy_uniform_is_ln2(self):
        c = TensorNode(np.array([[1.0, 0.0]]))
        p = TensorNode(np.array([[0.5, 0.5]]))
        assert float(ad.cross_entropy(c, p).values) == pytest.approx(math.log(2), rel=1e-6)

    def test_cross_entropy_rejects_bad_onehot(self):
        c = TensorNode(np.array([[0.6, 0.6]]))
        p = TensorNode(np.array([[0.5, 0.5]]))
        with pytest.raises(ValueError, match="sum to 1"):
            ad.cross_entropy(c, p)

    def test_l1_mean_of_identical_is_zero(self):
        x = TensorNode(np.random.default_rng(6).standard_normal((3, 4)))
        assert float(ad.l1_mean(x, x).values) == 0.0

    def test_mse_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            ad.mse(TensorNode(np.ones(3)), TensorNode(np.ones(4)))


class TestBackward:
    def test_linear_grad_is_input(self):
        rng = np.random.default_rng(7)
        xv = rng.standard_normal(5)
        w = TensorNode(rng.standard_normal(5), requires_grad=True, dtype=np.float64)
        loss = ad.reduce_sum(ad.mul(w, TensorNode(xv)))
        loss.backward()
        np.testing.assert_allclose(w.grad, xv, rtol=1e-12)

    def test_non_scalar_root_rejected(self):
        t = TensorNode(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            t.backward()

    def test_loss_grad_wrt_itself_is_one(self):
        w = TensorNode(np.array([2.0]), requires_grad=True)
        loss = ad.reduce_sum(ad.mul(w, w))
        loss.requires_grad = True
        loss.backward()
        assert loss.grad == pytest.approx(1.0)

    def test_repeated_backward_doubles(self):
        w = TensorNode(np.array([3.0]), requires_grad=True, dtype=np.float64)
        x = TensorNode(np.array([2.0]))
        loss = ad.reduce_sum(ad.mul(ad.tanh(w), x))
        loss.backward()
        first = w.grad.copy()
        loss.backward()
        np.testing.assert_allclose(w.grad, 2 * first, rtol=1e-12)

    def test_fanout_accumulates(self):
        w = TensorNode(np.array([1.5]), requires_grad=True, dtype=np.float64)
        loss = ad.reduce_sum(ad.add(ad.mul(w, w), w))  # w^2 + w -> grad 2w + 1
        loss.backward()
        assert w.grad[0] == pytest.approx(4.0)

    def test_composite_chain_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        x = rand_node(rng, (1, 2, 5, 5), 0.5)
        w = rand_node(rng, (2, 2, 3, 3), 0.5)
        b = rand_node(rng, (2,), 0.1)
        proj = TensorNode(rng.standard_normal((1, 2, 5, 5)))
        worst = check_gradients(
            lambda: ad.reduce_mean(ad.mul(ad.tanh(ad.conv2d(x, w, b, padding=1)), proj)),
            [x, w, b])
        assert worst < 1e-4

    def test_accumulation_is_linear(self):
        rng = np.random.default_rng(9)
        w = rand_node(rng, (4,))
        x1 = TensorNode(rng.standard_normal(4))
        x2 = TensorNode(rng.standard_normal(4))
        l1 = lambda: ad.reduce_sum(ad.mul(ad.tanh(w), x1))
        l2 = lambda: ad.reduce_sum(ad.mul(ad.sigmoid(w), x2))
        a, b = 0.7, -1.3
        w.grad = None
        ad.add(ad.scale(l1(), a), ad.scale(l2(), b)).backward()
        combined = w.grad.copy()
        w.grad = None
        l1().backward()
        g1 = w.grad.copy()
        w.grad = None
        l2().backward()
        g2 = w.grad.copy()
        np.testing.assert_allclose(combined, a * g1 + b * g2, atol=1e-5)

    def test_no_grad_builds_no_graph(self):
        w = TensorNode(np.ones(3), requires_grad=True)
        with ad.no_grad():
            out = ad.mul(w, w)
        assert not out.requires_grad
        assert out._backward_fn is None

    def test_detach_cuts_graph(self):
        w = TensorNode(np.ones(3), requires_grad=True)
        d = ad.mul(w, w).detach()
        assert not d.requires_grad
        loss = ad.reduce_sum(ad.mul(d, w))
        loss.backward()
        np.testing.assert_allclose(w.grad, np.ones(3))


class TestGradientSuite:
    """Every primitive against central finite differences, many seeds."""

    @pytest.mark.parametrize("seed", range(20))
    def test_primitives(self, seed):
        rng = np.random.default_rng(seed)
        x = rand_node(rng, (2, 3, 6, 6), 0.5)
        w = rand_node(rng, (2, 3, 3, 3), 0.4)
        b = rand_node(rng, (2,), 0.1)
        wt = rand_node(rng, (3, 2, 3, 3), 0.4)
        gain = rand_node(rng, (3,), 1.0)
        shift = rand_node(rng, (3,), 0.1)
        dense_w = rand_node(rng, (3, 4), 0.5)
        # kinky ops (leaky relu, abs) need inputs clear of the finite-difference stencil
        away = x.values.copy()
        away[np.abs(away) < 1e-3] = 1e-3
        x_kink = TensorNode(away, requires_grad=True, dtype=np.float64)
        proj = {}

        def p(key, shape):
            if key not in proj:
                proj[key] = TensorNode(rng.standard_normal(shape))
            return proj[key]

        cases = {
            "conv": (lambda: ad.reduce_mean(ad.mul(
                ad.conv2d(x, w, b, stride=2, padding=1), p("c", (2, 2, 3, 3)))), [x, w, b]),
            "tconv": (lambda: ad.reduce_mean(ad.mul(
                ad.transposed_conv2d(x, wt, stride=2, padding=1, output_padding=1),
                p("t", (2, 2, 12, 12)))), [x, wt]),
            "inorm": (lambda: ad.reduce_mean(ad.mul(
                ad.instance_norm(x, gain, shift), p("n", (2, 3, 6, 6)))), [x, gain, shift]),
            "tanh": (lambda: ad.reduce_mean(ad.mul(ad.tanh(x), p("th", (2, 3, 6, 6)))), [x]),
            "sigmoid": (lambda: ad.reduce_mean(ad.mul(ad.sigmoid(x), p("sg", (2, 3, 6, 6)))), [x]),
            "leaky": (lambda: ad.reduce_mean(ad.mul(
                ad.leaky_relu(x_kink, 0.2), p("lk", (2, 3, 6, 6)))), [x_kink]),
            "power": (lambda: ad.reduce_mean(ad.mul(
                ad.elementwise_power(x, 3), p("pw", (2, 3, 6, 6)))), [x]),
            "softmax_ce": (lambda: ad.cross_entropy(
                TensorNode(np.eye(4)[[0, 2]].astype(np.float64)),
                ad.softmax(ad.dense(ad.global_average_pool(x), dense_w), axis=-1)),
                [x, dense_w]),
            "l1": (lambda: ad.l1_mean(ad.tanh(x), TensorNode(
                p("l1", (2, 3, 6, 6)).values * 0 + 3.0)), [x]),
            "mse": (lambda: ad.mse(ad.tanh(x), p("ms", (2, 3, 6, 6))), [x]),
        }
        for name, (fn, params) in cases.items():
            worst = check_gradients(fn, params)
            assert worst < 1e-4, f"{name} failed at seed {seed}"
