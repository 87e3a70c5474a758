"""Finite-difference verification of every autodiff primitive."""

import numpy as np
import pytest

from mpae import autodiff as ad
from mpae.errors import ValidationError


def numeric_grad(fn, x, h=1e-6):
    """Central-difference gradient of the scalar fn() with respect to x, in place."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        hi = fn()
        flat[i] = saved - h
        lo = fn()
        flat[i] = saved
        gflat[i] = (hi - lo) / (2.0 * h)
    return g


def check_grads(build, *leaves, h=1e-6, rtol=1e-6, atol=1e-8):
    """Compare backward() against finite differences for each leaf."""
    out = build()
    out.backward()
    for leaf in leaves:
        assert leaf.grad is not None, "leaf never received a gradient"
        num = numeric_grad(lambda: build().item(), leaf.data, h=h)
        np.testing.assert_allclose(leaf.grad, num, rtol=rtol, atol=atol)
        leaf.grad = None


def leaf(rng, *shape):
    return ad.Tensor(rng.standard_normal(shape), requires_grad=True)


class TestArithmetic:
    def test_add_broadcast(self):
        rng = np.random.default_rng(0)
        a, b = leaf(rng, 3, 4), leaf(rng, 4)
        check_grads(lambda: ad.tsum(ad.mul(ad.add(a, b), ad.add(a, b))), a, b)

    def test_sub_broadcast_leading(self):
        rng = np.random.default_rng(1)
        a, b = leaf(rng, 2, 3, 4), leaf(rng, 1, 4)
        check_grads(lambda: ad.tsum(ad.power(ad.sub(a, b), 2)), a, b)

    def test_mul_scalar_operand(self):
        rng = np.random.default_rng(2)
        a = leaf(rng, 5)
        check_grads(lambda: ad.tsum(a * 3.0 + 1.0 - a / 2.0), a)

    def test_div(self):
        rng = np.random.default_rng(3)
        a = leaf(rng, 3, 3)
        b = ad.Tensor(rng.uniform(0.5, 1.5, (3, 3)), requires_grad=True)
        check_grads(lambda: ad.tsum(ad.div(a, b)), a, b)

    def test_neg_and_pow(self):
        rng = np.random.default_rng(4)
        a = ad.Tensor(rng.uniform(0.5, 2.0, (4,)), requires_grad=True)
        check_grads(lambda: ad.tsum(ad.neg(ad.power(a, 1.7))), a)


class TestElementwise:
    def test_exp_log_sqrt(self):
        rng = np.random.default_rng(5)
        a = ad.Tensor(rng.uniform(0.2, 2.0, (3, 4)), requires_grad=True)
        check_grads(lambda: ad.tsum(ad.log(a) + ad.sqrt(a) + ad.exp(a)), a)

    def test_tanh_sigmoid(self):
        rng = np.random.default_rng(6)
        a = leaf(rng, 6)
        check_grads(lambda: ad.tsum(ad.tanh(a) * ad.sigmoid(a)), a)

    def test_abs_away_from_zero(self):
        rng = np.random.default_rng(7)
        data = rng.standard_normal(8)
        data[np.abs(data) < 0.1] += 0.5
        a = ad.Tensor(data, requires_grad=True)
        check_grads(lambda: ad.tsum(ad.absolute(a)), a)

    def test_abs_zero_subgradient(self):
        a = ad.Tensor(np.zeros(3), requires_grad=True)
        ad.tsum(ad.absolute(a)).backward()
        np.testing.assert_array_equal(a.grad, np.zeros(3))

    def test_clamp_min(self):
        a = ad.Tensor(np.array([-1.0, -0.2, 0.3, 2.0]), requires_grad=True)
        out = ad.tsum(ad.clamp_min(a, 0.0))
        out.backward()
        np.testing.assert_array_equal(a.grad, [0.0, 0.0, 1.0, 1.0])
        a.grad = None
        check_grads(lambda: ad.tsum(ad.clamp_min(a, 0.0)), a)


class TestMatmul:
    def test_plain_2d(self):
        rng = np.random.default_rng(8)
        a, b = leaf(rng, 3, 4), leaf(rng, 4, 5)
        check_grads(lambda: ad.tsum(ad.matmul(a, b)), a, b)

    def test_batched_broadcast(self):
        rng = np.random.default_rng(9)
        a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
        check_grads(lambda: ad.tsum(ad.power(ad.matmul(a, b), 2)), a, b)

    def test_batched_both(self):
        rng = np.random.default_rng(10)
        a, b = leaf(rng, 2, 1, 3, 4), leaf(rng, 5, 4, 2)
        check_grads(lambda: ad.tsum(ad.matmul(a, b)), a, b)

    def test_rejects_1d(self):
        a = ad.Tensor(np.ones(3), requires_grad=True)
        b = ad.Tensor(np.ones((3, 2)), requires_grad=True)
        with pytest.raises(ValidationError):
            ad.matmul(a, b)


class TestReductions:
    def test_sum_axis_variants(self):
        rng = np.random.default_rng(11)
        a = leaf(rng, 2, 3, 4)
        for axis, keepdims in [(None, False), (1, False), (1, True), ((0, 2), False), ((0, 2), True), (-1, False)]:
            check_grads(lambda: ad.tsum(ad.power(ad.tsum(a, axis=axis, keepdims=keepdims), 2)), a)

    def test_mean_axis_variants(self):
        rng = np.random.default_rng(12)
        a = leaf(rng, 3, 4)
        for axis, keepdims in [(None, False), (0, True), ((0, 1), False), (-1, True)]:
            check_grads(lambda: ad.tsum(ad.power(ad.tmean(a, axis=axis, keepdims=keepdims), 2)), a)

    def test_amax(self):
        rng = np.random.default_rng(13)
        a = leaf(rng, 3, 5)
        for axis, keepdims in [(None, False), (1, False), (1, True), (0, False)]:
            check_grads(lambda: ad.tsum(ad.power(ad.amax(a, axis=axis, keepdims=keepdims), 2)), a)

    def test_amax_tie_splits_gradient(self):
        a = ad.Tensor(np.array([[2.0, 2.0, 1.0]]), requires_grad=True)
        ad.tsum(ad.amax(a, axis=1)).backward()
        np.testing.assert_allclose(a.grad, [[0.5, 0.5, 0.0]])


class TestSoftmax:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(14)
        a = leaf(rng, 4, 6)
        w = ad.Tensor(rng.standard_normal((4, 6)), requires_grad=False)
        for axis in (0, 1, -1):
            check_grads(lambda: ad.tsum(ad.softmax(a, axis=axis) * w), a)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(15)
        y = ad.softmax(ad.Tensor(rng.standard_normal((5, 7))), axis=-1)
        np.testing.assert_allclose(y.data.sum(axis=-1), np.ones(5), atol=1e-12)

    def test_shift_invariance(self):
        x = np.array([10.0, 11.0, 9.0])
        a = ad.softmax(ad.Tensor(x), axis=0)
        b = ad.softmax(ad.Tensor(x + 500.0), axis=0)
        np.testing.assert_allclose(a.data, b.data, atol=1e-12)


class TestShapeOps:
    def test_reshape_transpose(self):
        rng = np.random.default_rng(16)
        a = leaf(rng, 2, 3, 4)
        w = np.arange(24.0).reshape(4, 3, 2)
        check_grads(lambda: ad.tsum(ad.transpose(ad.reshape(a, (2, 3, 4)), (2, 1, 0)) * ad.Tensor(w)), a)

    def test_concatenate(self):
        rng = np.random.default_rng(17)
        a, b = leaf(rng, 2, 3), leaf(rng, 4, 3)
        check_grads(lambda: ad.tsum(ad.power(ad.concatenate([a, b], axis=0), 2)), a, b)

    def test_getitem_slices(self):
        rng = np.random.default_rng(18)
        a = leaf(rng, 4, 5)
        check_grads(lambda: ad.tsum(ad.power(a[1:3, ::2], 2)), a)

    def test_getitem_int_array_with_duplicates(self):
        rng = np.random.default_rng(19)
        a = leaf(rng, 5, 3)
        idx = np.array([0, 2, 2, 4])
        check_grads(lambda: ad.tsum(ad.power(a[idx], 2)), a)

    def test_getitem_boolean_mask(self):
        rng = np.random.default_rng(20)
        a = leaf(rng, 6)
        mask = np.array([True, False, True, True, False, True])
        check_grads(lambda: ad.tsum(ad.power(a[mask], 2)), a)

    def test_scatter(self):
        rng = np.random.default_rng(21)
        v = leaf(rng, 3, 2)
        idx = (np.array([0, 2, 3]),)
        w = np.arange(10.0).reshape(5, 2)
        check_grads(lambda: ad.tsum(ad.scatter((5, 2), idx, v) * ad.Tensor(w)), v)

    def test_scatter_forward_placement(self):
        v = ad.Tensor(np.array([[1.0], [2.0]]))
        out = ad.scatter((4, 1), (np.array([3, 1]),), v)
        np.testing.assert_array_equal(out.data[:, 0], [0.0, 2.0, 0.0, 1.0])


class TestGraphMechanics:
    def test_diamond_reuse_accumulates(self):
        rng = np.random.default_rng(22)
        a = leaf(rng, 3)
        check_grads(lambda: ad.tsum(a * a + ad.exp(a) * a), a)

    def test_two_backward_calls_accumulate(self):
        a = ad.Tensor(np.array([1.0, 2.0]), requires_grad=True)
        ad.tsum(a * 2.0).backward()
        ad.tsum(a * 3.0).backward()
        np.testing.assert_allclose(a.grad, [5.0, 5.0])

    def test_constant_inputs_build_no_graph(self):
        a = ad.Tensor(np.ones(3))
        out = a * 2.0 + 1.0
        assert not out.requires_grad
        assert out._parents == ()

    def test_nonscalar_backward_requires_seed(self):
        a = ad.Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValidationError):
            (a * 2.0).backward()

    def test_nonscalar_backward_with_seed(self):
        a = ad.Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        (a * a).backward(np.array([1.0, 0.5, 0.0]))
        np.testing.assert_allclose(a.grad, [2.0, 2.0, 0.0])

    def test_make_node_custom_primitive(self):
        a = ad.Tensor(np.array([1.0, 2.0]), requires_grad=True)
        out = ad.make_node(a.data * 4.0, (a,), lambda g: (g * 4.0,))
        ad.tsum(out).backward()
        np.testing.assert_allclose(a.grad, [4.0, 4.0])
