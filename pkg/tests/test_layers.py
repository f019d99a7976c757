import numpy as np
import pytest

from jtanet import layers as L
from jtanet.errors import NumericError, ShapeError
from oracles import bilinear_loops, conv2d_loops, numeric_grad, rel_err


class TestConv2d:
    def test_zero_kernel(self, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        assert not L.conv2d_forward(x, np.zeros((5, 3, 3, 3))).any()

    def test_centre_tap_identity(self):
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        out = L.conv2d_forward(np.array([[[[0.7]]]]), w)
        assert out.shape == (1, 1, 1, 1)
        assert out[0, 0, 0, 0] == 0.7

    def test_matches_loop_oracle(self, rng):
        x = rng.standard_normal((2, 3, 5, 5))
        w = rng.standard_normal((4, 3, 3, 3))
        np.testing.assert_allclose(L.conv2d_forward(x, w), conv2d_loops(x, w), atol=1e-12, rtol=0)

    def test_non_square_spatial(self, rng):
        x = rng.standard_normal((1, 2, 3, 6))
        w = rng.standard_normal((2, 2, 3, 3))
        np.testing.assert_allclose(L.conv2d_forward(x, w), conv2d_loops(x, w), atol=1e-12)

    def test_errors(self, rng):
        with pytest.raises(ShapeError):
            L.conv2d_forward(rng.standard_normal((1, 3, 4, 4)), rng.standard_normal((2, 4, 3, 3)))
        with pytest.raises(ShapeError):
            L.conv2d_forward(rng.standard_normal((1, 3, 4, 4)), rng.standard_normal((2, 3, 5, 5)))
        x = np.ones((1, 1, 2, 2))
        x[0, 0, 0, 0] = np.nan
        with pytest.raises(NumericError):
            L.conv2d_forward(x, np.ones((1, 1, 3, 3)))

    def test_backward_zero_grad(self, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        w = rng.standard_normal((2, 3, 3, 3))
        lg = L.conv2d_backward(x, w, np.zeros((2, 2, 4, 4)))
        assert not lg.input_grad.any() and not lg.param_grads["weight"].any()

    def test_backward_linear_in_grad_out(self, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        w = rng.standard_normal((2, 3, 3, 3))
        g = rng.standard_normal((2, 2, 4, 4))
        one, two = L.conv2d_backward(x, w, g), L.conv2d_backward(x, w, 2 * g)
        np.testing.assert_allclose(two.input_grad, 2 * one.input_grad, rtol=1e-14)
        np.testing.assert_allclose(two.param_grads["weight"], 2 * one.param_grads["weight"], rtol=1e-14)

    def test_backward_finite_differences(self, rng):
        x = rng.standard_normal((2, 2, 4, 3))
        w = rng.standard_normal((3, 2, 3, 3))
        r = rng.standard_normal((2, 3, 4, 3))
        f = lambda: float((L.conv2d_forward(x, w) * r).sum())
        lg = L.conv2d_backward(x, w, r)
        assert rel_err(lg.input_grad, numeric_grad(f, x)) < 1e-4
        assert rel_err(lg.param_grads["weight"], numeric_grad(f, w)) < 1e-4

    def test_backward_shape_error(self, rng):
        with pytest.raises(ShapeError):
            L.conv2d_backward(np.ones((1, 2, 3, 3)), np.ones((4, 2, 3, 3)), np.ones((1, 3, 3, 3)))


class TestConvTranspose:
    @pytest.mark.parametrize("shape", [(2, 3, 5, 5), (3, 4, 1, 1), (1, 2, 2, 6)])
    def test_adjoint_identity(self, rng, shape):
        b, ci, h, w_ = shape
        co = 3
        w = rng.standard_normal((co, ci, 3, 3))
        x = rng.standard_normal((b, ci, h, w_))
        y = rng.standard_normal((b, co, h, w_))
        lhs = float((L.conv2d_forward(x, w) * y).sum())
        rhs = float((x * L.conv2d_transpose_forward(y, w)).sum())
        assert abs(lhs - rhs) < 1e-10

    def test_zero_kernel(self, rng):
        assert not L.conv2d_transpose_forward(rng.standard_normal((1, 4, 3, 3)), np.zeros((4, 2, 3, 3))).any()

    def test_one_by_one_keeps_size(self, rng):
        out = L.conv2d_transpose_forward(rng.standard_normal((2, 5, 1, 1)), rng.standard_normal((5, 7, 3, 3)))
        assert out.shape == (2, 7, 1, 1)

    def test_finite_differences(self, rng):
        x = rng.standard_normal((2, 3, 3, 4))
        w = rng.standard_normal((3, 2, 3, 3))
        r = rng.standard_normal((2, 2, 3, 4))
        f = lambda: float((L.conv2d_transpose_forward(x, w) * r).sum())
        lg = L.conv2d_transpose_backward(x, w, r)
        assert rel_err(lg.input_grad, numeric_grad(f, x)) < 1e-4
        assert rel_err(lg.param_grads["weight"], numeric_grad(f, w)) < 1e-4


class TestBatchNorm:
    def _stats(self, c):
        return np.zeros(c), np.ones(c)

    def test_constant_input_gives_zero(self):
        x = np.full((2, 3, 4, 4), 5.0)
        out, _ = L.batchnorm_forward(x, np.ones(3), np.zeros(3), *self._stats(3))
        assert np.all(out == 0)

    def test_train_mode_moments(self, rng):
        x = rng.standard_normal((4, 3, 5, 5)) * 3 + 2
        gamma, beta = np.array([0.5, 2.0, 1.0]), np.array([-1.0, 0.3, 4.0])
        out, cache = L.batchnorm_forward(x, gamma, beta, *self._stats(3))
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), beta, atol=1e-6)
        # variance is gamma^2 up to the eps in the denominator
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), gamma ** 2, rtol=1e-4)

    def test_running_stats_update(self, rng):
        x = rng.standard_normal((4, 2, 3, 3))
        rm, rv = np.zeros(2), np.ones(2)
        _, cache = L.batchnorm_forward(x, np.ones(2), np.zeros(2), rm, rv)
        n = 4 * 9
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3)) * n / (n - 1)
        np.testing.assert_allclose(cache.running_mean, 0.1 * mean)
        np.testing.assert_allclose(cache.running_var, 0.9 + 0.1 * var)
        assert np.all(rm == 0) and np.all(rv == 1)

    def test_eval_uses_running_stats(self, rng):
        x = rng.standard_normal((3, 2, 2, 2))
        rm, rv = np.array([1.0, -1.0]), np.array([4.0, 0.25])
        out, _ = L.batchnorm_forward(x, np.ones(2), np.zeros(2), rm, rv, mode="eval")
        expect = (x - rm[None, :, None, None]) / np.sqrt(rv[None, :, None, None] + L.BN_EPS)
        np.testing.assert_allclose(out, expect)

    def test_single_sample_no_division_by_zero(self):
        out, _ = L.batchnorm_forward(np.ones((1, 2, 1, 1)), np.ones(2), np.zeros(2), *self._stats(2))
        assert np.all(np.isfinite(out))

    @pytest.mark.parametrize("mode", ["train", "eval"])
    def test_finite_differences(self, rng, mode):
        x = rng.standard_normal((3, 2, 3, 3))
        gamma = rng.uniform(0.5, 1.5, 2)
        beta = rng.standard_normal(2)
        rm, rv = rng.standard_normal(2), rng.uniform(0.5, 2, 2)
        r = rng.standard_normal(x.shape)

        def f():
            return float((L.batchnorm_forward(x, gamma, beta, rm, rv, mode)[0] * r).sum())

        _, cache = L.batchnorm_forward(x, gamma, beta, rm, rv, mode)
        lg = L.batchnorm_backward(cache, r)
        assert rel_err(lg.input_grad, numeric_grad(f, x)) < 1e-4
        assert rel_err(lg.param_grads["gamma"], numeric_grad(f, gamma)) < 1e-4
        assert rel_err(lg.param_grads["beta"], numeric_grad(f, beta)) < 1e-4


class TestPointwise:
    def test_leaky_relu_values(self):
        np.testing.assert_array_equal(L.leaky_relu(np.array([1.0, -1.0])), [1.0, -0.2])
        assert L.leaky_relu(np.array([0.0]))[0] == 0.0

    def test_leaky_relu_grad(self):
        g = L.leaky_relu_backward(np.array([2.0, -3.0, 0.0]), np.ones(3))
        np.testing.assert_array_equal(g, [1.0, 0.2, 1.0])

    def test_leaky_relu_finite_differences(self, rng):
        x = rng.standard_normal(20)
        x[np.abs(x) < 1e-3] = 0.5
        r = rng.standard_normal(20)
        f = lambda: float((L.leaky_relu(x) * r).sum())
        assert rel_err(L.leaky_relu_backward(x, r), numeric_grad(f, x)) < 1e-4

    def test_tanh(self, rng):
        assert L.tanh(np.array([0.0]))[0] == 0.0
        out = L.tanh(rng.standard_normal(100) * 5)
        assert np.all(np.abs(out) < 1)
        x = rng.standard_normal(10)
        r = rng.standard_normal(10)
        f = lambda: float((L.tanh(x) * r).sum())
        assert rel_err(L.tanh_backward(L.tanh(x), r), numeric_grad(f, x)) < 1e-4


class TestMaxPool:
    def test_single_window(self):
        out, idx = L.maxpool2x2(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        assert out[0, 0, 0, 0] == 4.0 and idx[0, 0, 0, 0] == 3

    def test_constant_routes_to_first(self):
        x = np.full((1, 1, 2, 2), 3.0)
        out, idx = L.maxpool2x2(x)
        assert out[0, 0, 0, 0] == 3.0
        g = L.maxpool2x2_backward(idx, np.ones((1, 1, 1, 1)))
        np.testing.assert_array_equal(g[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_odd_size_rejected(self):
        with pytest.raises(ShapeError):
            L.maxpool2x2(np.zeros((1, 1, 3, 4)))

    def test_finite_differences(self, rng):
        # distinct values with gaps much larger than h avoid ties
        x = rng.permutation(2 * 3 * 4 * 4).reshape(2, 3, 4, 4) * 0.1
        r = rng.standard_normal((2, 3, 2, 2))
        f = lambda: float((L.maxpool2x2(x)[0] * r).sum())
        _, idx = L.maxpool2x2(x)
        assert rel_err(L.maxpool2x2_backward(idx, r), numeric_grad(f, x)) < 1e-4


class TestUpsample:
    def test_constant(self):
        out = L.upsample_bilinear_2x(np.full((2, 3, 4, 5), 1.7))
        assert out.shape == (2, 3, 8, 10)
        np.testing.assert_allclose(out, 1.7, rtol=0, atol=1e-15)

    def test_single_pixel(self):
        out = L.upsample_bilinear_2x(np.array([[[[0.3]]]]))
        np.testing.assert_array_equal(out, np.full((1, 1, 2, 2), 0.3))

    def test_matches_pixel_oracle(self, rng):
        x = rng.standard_normal((2, 3, 4, 3))
        np.testing.assert_allclose(L.upsample_bilinear_2x(x), bilinear_loops(x), atol=1e-14)

    def test_finite_differences(self, rng):
        x = rng.standard_normal((1, 2, 3, 4))
        r = rng.standard_normal((1, 2, 6, 8))
        f = lambda: float((L.upsample_bilinear_2x(x) * r).sum())
        assert rel_err(L.upsample_bilinear_2x_backward(r), numeric_grad(f, x)) < 1e-4


def test_forwards_are_pure(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    w = rng.standard_normal((2, 3, 3, 3))
    x0, w0 = x.copy(), w.copy()
    a = L.conv2d_forward(x, w)
    b = L.conv2d_forward(x, w)
    assert np.array_equal(a, b)
    assert np.array_equal(x, x0) and np.array_equal(w, w0)
    assert np.array_equal(L.upsample_bilinear_2x(x), L.upsample_bilinear_2x(x))
