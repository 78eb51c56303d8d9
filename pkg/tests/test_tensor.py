import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from farmamba import functional as F
from farmamba.gradcheck import max_relative_error, numerical_grad, weighted_sum
from farmamba.tensor import (
    ShapeError,
    Tensor,
    add,
    add_const,
    broadcast_to,
    concat,
    einsum,
    getitem,
    matmul,
    max_,
    mean,
    mul,
    mul_const,
    no_grad,
    pad,
    reshape,
    roll,
    sigmoid,
    softplus,
    split,
    stack,
    sum_,
    take,
    tanh,
    transpose,
    where_const,
)


def conv2d_loops(x, w, b, padding, stride, groups):
    """Direct seven-deep loop convolution."""
    B, C, H, W = x.shape
    O, Cg, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    og = O // groups
    out = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            g = o // og
            for i in range(Ho):
                for j in range(Wo):
                    acc = b[o]
                    for c in range(Cg):
                        for di in range(k):
                            for dj in range(k):
                                acc += w[o, c, di, dj] * xp[n, g * Cg + c, i * stride + di, j * stride + dj]
                    out[n, o, i, j] = acc
    return out


class TestElementwise:
    def test_no_implicit_broadcasting(self, t64):
        with pytest.raises(ShapeError):
            add(t64(np.ones((2, 3))), t64(np.ones(3)))

    def test_scalar_operands_allowed(self, t64):
        x = t64([1.0, 2.0])
        np.testing.assert_array_equal((x * 3 + 1).data, [4.0, 7.0])

    def test_mul_const_refuses_shape_change(self, t64):
        with pytest.raises(ShapeError):
            mul_const(t64(np.ones(3)), np.ones((2, 3)))

    def test_add_const_broadcasts_constant(self, t64):
        out = add_const(t64(np.zeros((2, 3))), np.arange(3.0))
        np.testing.assert_array_equal(out.data, [[0, 1, 2], [0, 1, 2]])

    def test_softplus_is_stable_at_extremes(self, t64):
        out = softplus(t64([-800.0, 0.0, 800.0])).data
        assert out[0] == 0.0
        assert out[1] == pytest.approx(math.log(2))
        assert out[2] == 800.0

    def test_sigmoid_frozen_values(self, t64):
        out = sigmoid(t64([-1000.0, 0.0, 2.0])).data
        np.testing.assert_allclose(out, [0.0, 0.5, 1 / (1 + math.exp(-2))], atol=1e-15)

    @pytest.mark.parametrize(
        "fn",
        [
            lambda a, b: a * b + a / (b * b + 1.0),
            lambda a, b: softplus(a) * tanh(b),
            lambda a, b: sigmoid(a - b) ** 3,
            lambda a, b: F.silu(a) + F.relu(b),
        ],
    )
    def test_binary_gradients(self, fn, rng, t64):
        a, b = t64(rng.normal(size=(3, 4))), t64(rng.normal(size=(3, 4)))
        w = rng.normal(size=(3, 4))
        assert max_relative_error(lambda: weighted_sum(fn(a, b), w), [a, b]) < 1e-6


class TestReductionsAndShapes:
    def test_sum_mean_max_gradients(self, rng, t64):
        x = t64(rng.normal(size=(2, 3, 4)))
        fn = lambda: sum_(max_(x, axis=2)) + mean(x * x) + sum_(sum_(x, axis=(0, 2), keepdims=True) ** 2)
        assert max_relative_error(fn, [x]) < 1e-6

    def test_structural_ops_gradients(self, rng, t64):
        x = t64(rng.normal(size=(2, 3, 4)))
        y = t64(rng.normal(size=(2, 3, 4)))

        def fn():
            a = transpose(reshape(x, (6, 4)), (1, 0))
            b = concat([a, transpose(reshape(y, (6, 4)), (1, 0))], axis=1)
            c = stack(split(b, 3, axis=1), axis=0)
            d = pad(roll(c, [1], [2]), [(0, 0), (1, 0), (0, 2)])
            e = take(getitem(d, (slice(None), slice(1, 4))), np.array([2, 0, 0]), axis=1)
            return weighted_sum(e, np.linspace(-1, 1, e.size).reshape(e.shape))

        assert max_relative_error(fn, [x, y]) < 1e-6

    def test_matmul_einsum_broadcast_gradients(self, rng, t64):
        a, b = t64(rng.normal(size=(2, 3, 4))), t64(rng.normal(size=(2, 4, 5)))
        v = t64(rng.normal(size=(1, 5)))
        fn = lambda: sum_(matmul(a, b) * broadcast_to(reshape(v, (1, 1, 5)), (2, 3, 5))) + sum_(einsum("gij,gjk->gik", a, b))
        assert max_relative_error(fn, [a, b, v]) < 1e-6

    def test_matmul_matches_numpy(self, rng, t64):
        a, b = rng.normal(size=(3, 2, 5)), rng.normal(size=(3, 5, 4))
        np.testing.assert_allclose(matmul(t64(a), t64(b)).data, a @ b)

    def test_where_const_blocks_gradient(self, t64):
        x = t64([1.0, 2.0, 3.0])
        sum_(where_const(np.array([True, False, True]), x * x, 7.0)).backward()
        np.testing.assert_array_equal(x.grad, [2.0, 0.0, 6.0])

    def test_split_rejects_bad_sizes(self, t64):
        with pytest.raises(ShapeError):
            split(t64(np.ones(5)), [2, 2])


class TestTape:
    def test_backward_needs_scalar(self, t64):
        with pytest.raises(ShapeError):
            (t64(np.ones(3)) * 2).backward()

    def test_backward_on_detached_loss(self, t64):
        with pytest.raises(RuntimeError):
            sum_(t64(np.ones(3), grad=False)).backward()

    def test_gradients_accumulate_across_calls(self, t64):
        x = t64([2.0])
        sum_(x * x).backward()
        sum_(x * x).backward()
        assert x.grad[0] == 8.0

    def test_shared_subexpression(self, t64):
        x = t64([3.0])
        y = x * x
        sum_(y * y + y).backward()  # d/dx (x^4 + x^2) = 4x^3 + 2x
        assert x.grad[0] == 4 * 27 + 6

    def test_no_grad_records_nothing(self, t64):
        x = t64([1.0])
        with no_grad():
            y = x * 2
        assert not y.requires_grad

    def test_detach_cuts_the_tape(self, t64):
        x = t64([1.0, 2.0])
        sum_(x.detach() * x).backward()
        np.testing.assert_array_equal(x.grad, [1.0, 2.0])

    def test_numerical_grad_of_square(self, t64):
        x = t64([3.0])
        assert numerical_grad(lambda: sum_(x * x), x, (0,)) == pytest.approx(6.0, abs=1e-8)


class TestFunctional:
    @pytest.mark.parametrize(
        "c,o,k,padding,stride,groups",
        [(3, 4, 3, 1, 1, 1), (4, 2, 3, 0, 2, 2), (4, 4, 3, 1, 1, 4), (2, 6, 1, 0, 1, 2), (3, 3, 5, 2, 1, 3)],
    )
    def test_conv2d_matches_loops(self, rng, t64, c, o, k, padding, stride, groups):
        x = rng.normal(size=(2, c, 6, 5))
        w = rng.normal(size=(o, c // groups, k, k))
        b = rng.normal(size=o)
        got = F.conv2d(t64(x), t64(w), t64(b), padding=padding, stride=stride, groups=groups).data
        np.testing.assert_allclose(got, conv2d_loops(x, w, b, padding, stride, groups), atol=1e-12)

    def test_conv2d_rejects_even_kernel(self, t64):
        with pytest.raises(ShapeError):
            F.conv2d(t64(np.ones((1, 1, 4, 4))), t64(np.ones((1, 1, 2, 2))))

    def test_linear_matches_numpy(self, rng, t64):
        x, w, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5)), rng.normal(size=5)
        np.testing.assert_allclose(F.linear(t64(x), t64(w), t64(b)).data, x @ w + b)

    def test_layer_norm_statistics(self, rng, t64):
        y = F.layer_norm(t64(rng.normal(3, 2, size=(4, 16)))).data
        np.testing.assert_allclose(y.mean(-1), 0, atol=1e-12)
        np.testing.assert_allclose(y.var(-1), 1, atol=1e-4)

    def test_log_softmax_large_logits(self, t64):
        out = F.log_softmax(t64([[1000.0, 0.0]]), axis=1).data
        np.testing.assert_allclose(out, [[0.0, -1000.0]])

    def test_pooling_and_upsampling(self, t64):
        x = t64(np.arange(16.0).reshape(1, 1, 4, 4))
        np.testing.assert_array_equal(F.avg_pool2d(x, 2).data[0, 0], [[2.5, 4.5], [10.5, 12.5]])
        np.testing.assert_array_equal(F.max_pool2d(x, 2).data[0, 0], [[5, 7], [13, 15]])
        up = F.upsample_nearest(F.avg_pool2d(x, 2), 2).data[0, 0]
        assert up.shape == (4, 4) and up[1, 1] == 2.5 and up[3, 2] == 12.5

    def test_space_to_depth_layout(self, t64):
        x = t64(np.arange(8.0).reshape(1, 2, 2, 2))
        out = F.space_to_depth(x, 2).data
        assert out.shape == (1, 1, 1, 8)
        assert sorted(out.ravel().tolist()) == list(range(8))

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 6)), elements=st.floats(-50, 50)))
    def test_softmax_is_a_distribution(self, a):
        p = F.softmax(Tensor(a), axis=1).data
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert (p >= 0).all()
