"""Per-op finite-difference checks for the reverse-mode engine."""

import numpy as np
import pytest

from cmdspot import autodiff as ad


def scalarize(out: ad.Tensor, weight: np.ndarray) -> ad.Tensor:
    """Reduce any output to a scalar so one backward covers all entries."""
    return ad.sum_(ad.mul(out, ad.constant(weight)))


def check_grads(build, arrays, h=1e-6, rtol=1e-5, atol=1e-8):
    """Compare backward() against central differences for every input.

    ``build`` maps a list of Tensors to an output Tensor; ``arrays`` are the
    float64 leaf values.
    """
    rng = np.random.default_rng(99)
    weight = rng.standard_normal(build([ad.constant(a) for a in arrays]).shape)

    def value(arrs):
        return float(scalarize(build([ad.constant(a) for a in arrs]), weight).data)

    leaves = [ad.parameter(a.copy()) for a in arrays]
    scalarize(build(leaves), weight).backward()

    for i, base in enumerate(arrays):
        analytic = leaves[i].grad
        assert analytic is not None, f"input {i} received no gradient"
        numeric = np.zeros_like(base)
        flat = base.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            work = [a.copy() for a in arrays]
            work[i].reshape(-1)[j] = orig + h
            up = value(work)
            work[i].reshape(-1)[j] = orig - h
            down = value(work)
            numeric.reshape(-1)[j] = (up - down) / (2 * h)
        np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


RNG = np.random.default_rng(0)


class TestElementwise:
    def test_add_broadcast(self):
        check_grads(lambda t: ad.add(t[0], t[1]), [RNG.standard_normal((3, 4)), RNG.standard_normal(4)])

    def test_sub(self):
        check_grads(lambda t: ad.sub(t[0], t[1]), [RNG.standard_normal((2, 3)), RNG.standard_normal((2, 3))])

    def test_mul_broadcast(self):
        check_grads(
            lambda t: ad.mul(t[0], t[1]),
            [RNG.standard_normal((2, 3, 4)), RNG.standard_normal((1, 3, 1))],
        )

    def test_scalar_mul(self):
        check_grads(lambda t: ad.mul(t[0], 0.37), [RNG.standard_normal((3, 3))])

    def test_unaries(self):
        x = RNG.uniform(0.2, 1.5, (3, 4))
        for fn in (ad.tanh, ad.sigmoid, ad.exp, ad.log, ad.swish):
            check_grads(lambda t, fn=fn: fn(t[0]), [x])

    def test_relu_off_kink(self):
        x = RNG.standard_normal((4, 4))
        x[np.abs(x) < 0.05] = 0.1
        check_grads(lambda t: ad.relu(t[0]), [x])


class TestMatmulAndShape:
    def test_matmul_2d(self):
        check_grads(
            lambda t: ad.matmul(t[0], t[1]),
            [RNG.standard_normal((3, 5)), RNG.standard_normal((5, 2))],
        )

    def test_matmul_batched_against_weights(self):
        check_grads(
            lambda t: ad.matmul(t[0], t[1]),
            [RNG.standard_normal((2, 4, 3)), RNG.standard_normal((3, 6))],
            rtol=1e-4,
        )

    def test_matmul_fully_batched(self):
        check_grads(
            lambda t: ad.matmul(t[0], t[1]),
            [RNG.standard_normal((2, 2, 3, 4)), RNG.standard_normal((2, 2, 4, 3))],
            rtol=1e-4,
        )

    def test_reshape_swapaxes(self):
        check_grads(
            lambda t: ad.swapaxes(ad.reshape(t[0], (2, 3, 4)), 0, 2),
            [RNG.standard_normal((6, 4))],
        )

    def test_getitem_slices(self):
        check_grads(lambda t: t[0][:, 1:3], [RNG.standard_normal((4, 5))])
        check_grads(lambda t: t[0][:, 2], [RNG.standard_normal((4, 5))])

    def test_concat(self):
        check_grads(
            lambda t: ad.concat([t[0], t[1]], axis=1),
            [RNG.standard_normal((3, 2)), RNG.standard_normal((3, 4))],
        )

    def test_reductions(self):
        check_grads(lambda t: ad.sum_(t[0], axis=1), [RNG.standard_normal((3, 4))])
        check_grads(lambda t: ad.mean(t[0], axis=0, keepdims=True), [RNG.standard_normal((3, 4))])
        check_grads(lambda t: ad.mean(t[0]), [RNG.standard_normal((3, 4))])


class TestFusedLayers:
    def test_softmax(self):
        check_grads(lambda t: ad.softmax(t[0], axis=-1), [RNG.standard_normal((3, 7))], rtol=1e-4)

    def test_log_softmax(self):
        check_grads(lambda t: ad.log_softmax(t[0], axis=-1), [RNG.standard_normal((3, 7))], rtol=1e-4)

    def test_log_softmax_normalizes(self):
        y = ad.log_softmax(ad.constant(RNG.standard_normal((5, 9))), axis=-1)
        np.testing.assert_allclose(np.exp(y.data).sum(axis=-1), 1.0, atol=1e-12)

    def test_layer_norm(self):
        check_grads(
            lambda t: ad.layer_norm(t[0], t[1], t[2]),
            [
                RNG.standard_normal((2, 3, 5)),
                RNG.uniform(0.5, 1.5, 5),
                RNG.standard_normal(5),
            ],
            rtol=1e-4,
            atol=1e-6,
        )

    def test_depthwise_conv1d(self):
        check_grads(
            lambda t: ad.depthwise_conv1d(t[0], t[1], t[2]),
            [
                RNG.standard_normal((2, 6, 3)),
                RNG.standard_normal((5, 3)),
                RNG.standard_normal(3),
            ],
            rtol=1e-4,
        )

    def test_depthwise_conv_same_padding_value(self):
        """Kernel [0,1,0] with zero bias reproduces the input exactly."""
        x = RNG.standard_normal((1, 7, 2))
        w = np.zeros((3, 2))
        w[1] = 1.0
        out = ad.depthwise_conv1d(ad.constant(x), ad.constant(w), ad.constant(np.zeros(2)))
        np.testing.assert_array_equal(out.data, x)

    def test_gather_rows(self):
        idx = np.array([2, 0, 1])
        check_grads(lambda t: ad.gather_rows(t[0], idx), [RNG.standard_normal((3, 4))])


class TestGraphMechanics:
    def test_diamond_accumulates_both_paths(self):
        """y = x*x + x must see dy/dx = 2x + 1."""
        x = ad.parameter(np.array([1.5, -0.5]))
        y = ad.sum_(ad.add(ad.mul(x, x), x))
        y.backward()
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)

    def test_constants_build_no_graph(self):
        a = ad.constant(np.ones((2, 2)))
        b = ad.constant(np.ones((2, 2)))
        out = ad.matmul(ad.add(a, b), b)
        assert not out.requires_grad
        assert out._bwd is None

    def test_reused_parameter_in_two_ops(self):
        w = ad.parameter(np.array([[2.0]]))
        out = ad.add(ad.matmul(w, w), w)
        out.backward(np.ones((1, 1)))
        # d(w@w + w)/dw at scalar w: 2w + 1
        np.testing.assert_allclose(w.grad, [[5.0]])

    def test_backward_seed_shapes(self):
        x = ad.parameter(RNG.standard_normal((2, 3)))
        y = ad.mul(x, 3.0)
        seed = np.ones((2, 3))
        y.backward(seed)
        np.testing.assert_allclose(x.grad, 3.0 * seed)

    def test_zero_grad_for_disconnected(self):
        x = ad.parameter(np.ones(3))
        y = ad.sum_(ad.mul(ad.constant(np.ones(3)), 2.0))
        y.backward()
        assert x.grad is None
