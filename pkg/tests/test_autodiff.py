"""Tests for the reverse-mode engine: brute-force oracles, adjoint
identities, and finite-difference gradient checks for every primitive."""

import numpy as np
import pytest

from hsiseg.autodiff import (Tape, Tensor, add, conv3d, conv3d_transpose,
                             dense, dropout, grad_check, kl_divergence, mul,
                             pairwise_sqdist, reshape, scale, student_t_rows,
                             sub, sum_all)
from hsiseg.errors import ParameterError, ShapeError


def conv3d_loop_oracle(x, kernels, bias):
    """Six-nested-loop reference convolution, single or multi channel."""
    if x.ndim == 3:
        x = x[None]
    if kernels.ndim == 4:
        kernels = kernels[:, None]
    C, h, w, d = x.shape
    K, _, kh, kw, kd = kernels.shape
    out = np.empty((K, h - kh + 1, w - kw + 1, d - kd + 1))
    for k in range(K):
        for i in range(h - kh + 1):
            for j in range(w - kw + 1):
                for l in range(d - kd + 1):
                    window = x[:, i:i + kh, j:j + kw, l:l + kd]
                    out[k, i, j, l] = bias[k] + float((window * kernels[k]).sum())
    return out


class TestConv3d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(4, 4, 6))
        out = conv3d(x, np.ones((1, 1, 1, 1)), np.zeros(1))
        np.testing.assert_array_equal(out.data[0], x)

    def test_all_ones_kernel_constant_input(self):
        c, b = 3.5, 0.25
        x = np.full((4, 5, 6), c)
        out = conv3d(x, np.ones((1, 2, 2, 2)), np.array([b]))
        np.testing.assert_allclose(out.data, 8 * c + b)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 4, 5))
        kernels = rng.normal(size=(2, 3, 3, 2))
        bias = rng.normal(size=2)
        expected = conv3d_loop_oracle(x, kernels, bias)
        np.testing.assert_allclose(conv3d(x, kernels, bias).data, expected, atol=1e-12)

    def test_multichannel_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 5, 5, 7))
        kernels = rng.normal(size=(4, 3, 3, 3, 4))
        bias = rng.normal(size=4)
        expected = conv3d_loop_oracle(x, kernels, bias)
        np.testing.assert_allclose(conv3d(x, kernels, bias).data, expected, atol=1e-12)

    def test_batch_axis_matches_per_patch(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(6, 2, 5, 5, 8))
        kernels = rng.normal(size=(3, 2, 3, 3, 4))
        bias = rng.normal(size=3)
        batched = conv3d(x, kernels, bias).data
        for p in range(6):
            np.testing.assert_allclose(batched[p], conv3d(x[p], kernels, bias).data)

    def test_kernel_larger_than_input(self):
        with pytest.raises(ShapeError):
            conv3d(np.zeros((2, 2, 2)), np.zeros((1, 3, 3, 3)), np.zeros(1))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv3d(np.zeros((2, 4, 4, 4)), np.zeros((1, 3, 2, 2, 2)), np.zeros(1))


class TestConv3dTranspose:
    def test_output_extent_grows_by_kernel_minus_one(self):
        y = np.zeros((2, 3, 4, 5))
        out = conv3d_transpose(y, np.zeros((2, 1, 3, 2, 4)), np.zeros(1))
        assert out.data.shape == (3 + 2, 4 + 1, 5 + 3)

    def test_one_by_one_kernel_scales(self):
        rng = np.random.default_rng(4)
        y = rng.normal(size=(3, 3, 4))
        out = conv3d_transpose(y, np.full((1, 1, 1, 1), 2.0), np.array([0.5]))
        np.testing.assert_allclose(out.data, 2.0 * y + 0.5)

    @pytest.mark.parametrize("seed", range(5))
    def test_adjoint_identity(self, seed):
        """<conv(x, W), y> == <x, conv_transpose(y, W)> for random shapes."""
        rng = np.random.default_rng(seed)
        c, k = rng.integers(1, 4), rng.integers(1, 4)
        kh, kw, kd = rng.integers(1, 4, size=3)
        h, w, d = kh + rng.integers(0, 4), kw + rng.integers(0, 4), kd + rng.integers(0, 5)
        x = rng.normal(size=(int(c), int(h), int(w), int(d)))
        kernels = rng.normal(size=(int(k), int(c), int(kh), int(kw), int(kd)))
        y = rng.normal(size=(int(k), int(h - kh + 1), int(w - kw + 1), int(d - kd + 1)))
        lhs = float((conv3d(x, kernels, np.zeros(int(k))).data * y).sum())
        rtensor = conv3d_transpose(y, kernels, np.zeros(int(c))).data
        rhs = float((x * rtensor.reshape(x.shape)).sum())
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


class TestDense:
    def test_identity_weights(self):
        x = np.arange(4.0)
        out = dense(x, np.eye(4), np.zeros(4))
        np.testing.assert_array_equal(out.data, x)

    def test_zero_weights_returns_bias(self):
        bias = np.array([1.0, -2.0])
        out = dense(np.ones(3), np.zeros((2, 3)), bias)
        np.testing.assert_array_equal(out.data, bias)

    def test_matches_naive_matmul(self):
        rng = np.random.default_rng(5)
        x, w, b = rng.normal(size=4), rng.normal(size=(3, 4)), rng.normal(size=3)
        expected = np.array([b[i] + sum(w[i, j] * x[j] for j in range(4)) for i in range(3)])
        np.testing.assert_allclose(dense(x, w, b).data, expected, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dense(np.zeros(3), np.zeros((2, 4)), np.zeros(2))


class TestDropout:
    def test_p_zero_train_is_identity(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(10, 10))
        out = dropout(x, 0.0, "train", np.random.default_rng(0))
        np.testing.assert_array_equal(out.data, x)

    def test_infer_is_identity_for_any_p(self):
        x = np.ones((5, 5))
        out = dropout(x, 0.9, "infer")
        np.testing.assert_array_equal(out.data, x)

    def test_inverted_scaling_preserves_mean(self):
        """Law of large numbers: the sample mean stays within 1% of 1."""
        x = np.ones(1_000_000)
        out = dropout(x, 0.5, "train", np.random.default_rng(7))
        assert abs(out.data.mean() - 1.0) < 0.01

    def test_deterministic_under_seed(self):
        x = np.ones(100)
        a = dropout(x, 0.5, "train", np.random.default_rng(8)).data
        b = dropout(x, 0.5, "train", np.random.default_rng(8)).data
        np.testing.assert_array_equal(a, b)

    def test_invalid_probability(self):
        with pytest.raises(ParameterError):
            dropout(np.ones(3), 1.0, "train", np.random.default_rng(0))


class TestTapeSemantics:
    def test_fanout_adjoints_sum(self):
        """d/dx of (f(x) + f(x)) must equal 2 f'(x)."""
        x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
        tape = Tape()
        y = mul(x, x, tape)
        total = sum_all(add(y, y, tape), tape)
        tape.backward(total)
        np.testing.assert_allclose(x.grad, 4.0 * x.data)

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        tape = Tape()
        y = mul(x, x, tape)
        with pytest.raises(ParameterError):
            tape.backward(y)

    def test_no_tape_means_no_recording(self):
        x = Tensor(np.ones(3), requires_grad=True)
        tape = Tape()
        mul(x, x, None)
        assert len(tape) == 0


class TestGradCheck:
    def test_sum_of_squares(self):
        """f(x) = sum(x^2) has gradient 2x; the checker must agree closely."""
        x = Tensor(np.linspace(-1.0, 2.0, 7), requires_grad=True)

        def f(tape):
            return sum_all(mul(x, x, tape), tape)

        assert grad_check(f, x, eps=1e-5) <= 1e-8

    def test_constant_function_zero_error(self):
        x = Tensor(np.ones(3), requires_grad=True)

        def f(tape):
            return Tensor(4.0)

        assert grad_check(f, x) == 0.0

    def test_rejects_non_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ParameterError):
            grad_check(lambda tape: mul(x, x, tape), x)

    def test_rejects_bad_eps(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ParameterError):
            grad_check(lambda tape: sum_all(x, tape), x, eps=0.0)


def _quadratic_through(op_builder, params):
    """Scalar loss sum(op(...)^2) for gradient checking an op."""

    def f(tape):
        out = op_builder(tape)
        return sum_all(mul(out, out, tape), tape)

    return f


class TestPrimitiveGradients:
    """Central-difference checks, one primitive at a time."""

    def test_conv3d(self):
        rng = np.random.default_rng(10)
        x = Tensor(rng.normal(size=(2, 3, 3, 4)), requires_grad=True)
        k = Tensor(rng.normal(size=(2, 2, 2, 2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=2), requires_grad=True)
        f = _quadratic_through(lambda tape: conv3d(x, k, b, tape), None)
        assert grad_check(f, [x, k, b]) <= 1e-4

    def test_conv3d_transpose(self):
        rng = np.random.default_rng(11)
        y = Tensor(rng.normal(size=(2, 2, 2, 3)), requires_grad=True)
        k = Tensor(rng.normal(size=(2, 2, 2, 2, 2)), requires_grad=True)
        b = Tensor(rng.normal(size=2), requires_grad=True)
        f = _quadratic_through(lambda tape: conv3d_transpose(y, k, b, tape), None)
        assert grad_check(f, [y, k, b]) <= 1e-4

    def test_dense(self):
        rng = np.random.default_rng(12)
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=2), requires_grad=True)
        f = _quadratic_through(lambda tape: dense(x, w, b, tape), None)
        assert grad_check(f, [x, w, b]) <= 1e-4

    def test_dropout_frozen_mask(self):
        """With the mask frozen (fixed seed), dropout is linear and checkable."""
        rng = np.random.default_rng(13)
        x = Tensor(rng.normal(size=(4, 4)), requires_grad=True)

        def f(tape):
            out = dropout(x, 0.5, "train", np.random.default_rng(99), tape)
            return sum_all(mul(out, out, tape), tape)

        assert grad_check(f, x) <= 1e-4

    def test_pairwise_sqdist(self):
        rng = np.random.default_rng(14)
        z = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        c = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        f = _quadratic_through(lambda tape: pairwise_sqdist(z, c, tape), None)
        assert grad_check(f, [z, c]) <= 1e-4

    def test_student_t_rows(self):
        rng = np.random.default_rng(15)
        d = Tensor(rng.uniform(0.1, 4.0, size=(4, 3)), requires_grad=True)
        f = _quadratic_through(lambda tape: student_t_rows(d, tape), None)
        assert grad_check(f, d) <= 1e-4

    def test_kl_divergence(self):
        rng = np.random.default_rng(16)
        z = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        c = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        raw = rng.uniform(0.05, 1.0, size=(4, 3))
        target = raw / raw.sum(axis=1, keepdims=True)

        def f(tape):
            q = student_t_rows(pairwise_sqdist(z, c, tape), tape)
            return kl_divergence(target, q, tape)

        assert grad_check(f, [z, c]) <= 1e-4

    def test_reshape_scale_sub(self):
        rng = np.random.default_rng(17)
        x = Tensor(rng.normal(size=(2, 6)), requires_grad=True)
        other = rng.normal(size=(3, 4))

        def f(tape):
            r = reshape(x, (3, 4), tape)
            diff = sub(r, Tensor(other), tape)
            return scale(sum_all(mul(diff, diff, tape), tape), 0.25, tape)

        assert grad_check(f, x) <= 1e-4


class TestDeterminism:
    def test_same_seed_bitwise_identical(self):
        rng = np.random.default_rng(18)
        x = rng.normal(size=(3, 4, 4, 6))
        k = rng.normal(size=(2, 3, 2, 2, 3))
        b = rng.normal(size=2)

        def run(seed):
            xt = Tensor(x, requires_grad=True)
            tape = Tape()
            h = conv3d(xt, Tensor(k, requires_grad=True), Tensor(b, requires_grad=True), tape)
            h = dropout(h, 0.3, "train", np.random.default_rng(seed), tape)
            loss = sum_all(mul(h, h, tape), tape)
            tape.backward(loss)
            return loss.data.copy(), xt.grad.copy()

        la, ga = run(42)
        lb, gb = run(42)
        assert la == lb
        np.testing.assert_array_equal(ga, gb)
