"""Tensor-core tests: op semantics, gradients vs central differences,
rng determinism and statistics, broadcast discipline."""

import numpy as np
import pytest

from osfa import tensor as T
from osfa.tensor import Rng, Tensor, TensorError


def fd_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Independent oracle: central finite differences, elementwise."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gf[i] = (up - down) / (2 * h)
    return g


def max_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float((np.abs(a - b) / denom).max())


class TestElementwise:
    def test_add(self):
        out = T.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
        np.testing.assert_array_equal(out.data, [4.0, 6.0])

    def test_relu(self):
        out = T.relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_mul_by_zero_scalar(self):
        x = Tensor([[1.5, -2.0], [3.0, 4.0]])
        out = T.mul(x, Tensor(np.float32(0.0)))
        np.testing.assert_array_equal(out.data, np.zeros((2, 2)))

    def test_shape_mismatch_is_structured(self):
        with pytest.raises(TensorError, match=r"\(2,\).*\(3,\)"):
            T.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))

    def test_no_silent_broadcast_beyond_scalar(self):
        a = Tensor(np.ones((2, 3), dtype=np.float32))
        b = Tensor(np.ones((3,), dtype=np.float32))
        with pytest.raises(TensorError):
            T.mul(a, b)
        with pytest.raises(TensorError):
            T.add(a, Tensor(np.ones((1, 3), dtype=np.float32)))

    def test_scalar_tensor_broadcast_allowed(self):
        a = Tensor(np.full((2, 2), 3.0, dtype=np.float32))
        s = Tensor(np.float32(2.0))
        np.testing.assert_array_equal(T.mul(a, s).data, np.full((2, 2), 6.0))

    def test_dtype_mismatch_rejected(self):
        with pytest.raises(TensorError, match="dtype"):
            T.add(Tensor([1.0], dtype=np.float32), Tensor([1.0], dtype=np.float64))


class TestConv2d:
    def test_identity_kernel(self):
        x = Tensor(np.arange(9, dtype=np.float32).reshape(1, 3, 3))
        k = Tensor(np.ones((1, 1, 1, 1), dtype=np.float32))
        out = T.conv2d(x, k, stride=1, pad=0)
        np.testing.assert_array_equal(out.data, x.data)

    def test_all_ones_sums_to_nine(self):
        x = Tensor(np.ones((1, 3, 3), dtype=np.float32))
        k = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        out = T.conv2d(x, k, stride=1, pad=0)
        assert out.shape == (1, 1, 1)
        assert out.item() == 9.0  # hand sum of nine ones

    def test_zero_kernel(self):
        x = Tensor(np.random.default_rng(0).normal(size=(2, 5, 5)).astype(np.float32))
        k = Tensor(np.zeros((3, 2, 3, 3), dtype=np.float32))
        out = T.conv2d(x, k, stride=1, pad=1)
        np.testing.assert_array_equal(out.data, np.zeros((3, 5, 5)))

    def test_output_extents(self):
        x = Tensor(np.zeros((1, 10, 7), dtype=np.float32))
        k = Tensor(np.zeros((4, 1, 3, 3), dtype=np.float32))
        out = T.conv2d(x, k, stride=2, pad=1)
        # floor((H + 2*pad - k)/stride) + 1
        assert out.shape == (4, (10 + 2 - 3) // 2 + 1, (7 + 2 - 3) // 2 + 1)

    def test_nonpositive_output_rejected(self):
        x = Tensor(np.zeros((1, 3, 3), dtype=np.float32))
        k = Tensor(np.zeros((1, 1, 5, 5), dtype=np.float32))
        with pytest.raises(TensorError):
            T.conv2d(x, k, stride=1, pad=0)

    def test_even_kernel_rejected(self):
        x = Tensor(np.zeros((1, 4, 4), dtype=np.float32))
        k = Tensor(np.zeros((1, 1, 2, 2), dtype=np.float32))
        with pytest.raises(TensorError, match="odd"):
            T.conv2d(x, k)


class TestReduce:
    def test_sum(self):
        assert T.reduce_sum(Tensor([1.0, 2.0, 3.0])).item() == 6.0

    def test_mean(self):
        assert T.reduce_mean(Tensor([2.0, 4.0])).item() == 3.0

    def test_max_singleton_identity(self):
        assert T.reduce_max(Tensor([7.5])).item() == 7.5

    def test_sum_axes(self):
        x = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
        np.testing.assert_array_equal(T.reduce_sum(x, axes=(0,)).data, [3.0, 5.0, 7.0])

    def test_empty_reduction_rejected(self):
        with pytest.raises(TensorError):
            T.reduce_sum(Tensor(np.zeros((0,), dtype=np.float32)))


class TestBackward:
    def test_square_gradient(self):
        x = Tensor(np.array(3.0, dtype=np.float64), requires_grad=True)
        loss = T.mul(x, x)
        grads = T.backward(loss)
        assert grads[x].item() == 6.0

    def test_pathwise_rule_sum_sigma_eps(self):
        # loss = sum(sigma * eps) with eps fixed: d/d sigma_i = sum_jk eps_ijk
        rng = Rng(3)
        eps = Tensor(rng.normal((4, 5, 6), dtype=np.float64))
        sigma = Tensor(np.full(4, 0.1), requires_grad=True)
        sig_b = T.broadcast_to(T.reshape(sigma, (4, 1, 1)), (4, 5, 6))
        loss = T.reduce_sum(T.mul(sig_b, eps))
        grads = T.backward(loss)
        np.testing.assert_allclose(grads[sigma].data, eps.data.sum(axis=(1, 2)), rtol=1e-12)

    def test_backward_on_nonscalar_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(TensorError, match="scalar"):
            T.backward(T.mul(x, x))

    def test_backward_on_detached_rejected(self):
        with pytest.raises(TensorError, match="not connected"):
            T.backward(Tensor(np.array(1.0)))

    def test_nontrainable_leaves_untouched(self):
        x = Tensor(np.array(2.0, dtype=np.float64), requires_grad=True)
        c = Tensor(np.array(5.0, dtype=np.float64))
        grads = T.backward(T.mul(x, c))
        assert x in grads and c not in grads
        assert c.grad is None

    def test_grad_accumulates_over_reuse(self):
        x = Tensor(np.array(2.0, dtype=np.float64), requires_grad=True)
        loss = T.add(T.mul(x, x), T.mul(x, Tensor(np.array(3.0))))
        grads = T.backward(loss)
        assert grads[x].item() == pytest.approx(2 * 2 + 3)


# Randomized gradient checks for every differentiable op, against the
# finite-difference oracle, in 64-bit. Inputs are kept away from kinks.
GRAD_CASES = [
    ("add", lambda x, y: T.add(x, y), 2),
    ("sub", lambda x, y: T.sub(x, y), 2),
    ("mul", lambda x, y: T.mul(x, y), 2),
    ("div", lambda x, y: T.div(x, T.add(T.mul(y, y), 1.0)), 2),
    ("neg", lambda x: T.neg(x), 1),
    ("exp", lambda x: T.exp(x), 1),
    ("log", lambda x: T.log(T.add(T.mul(x, x), 1.0)), 1),
    ("sqrt", lambda x: T.sqrt(T.add(T.mul(x, x), 1.0)), 1),
    ("sigmoid", lambda x: T.sigmoid(x), 1),
    ("reshape", lambda x: T.reshape(x, (x.size,)), 1),
    ("mean", lambda x: T.reduce_mean(x, axes=(1,), keepdims=True), 1),
]


@pytest.mark.parametrize("name,fn,nargs", GRAD_CASES, ids=[c[0] for c in GRAD_CASES])
def test_gradients_match_finite_differences(name, fn, nargs):
    rng = Rng(sum(ord(c) for c in name))
    shape = (3, 4)
    args = [Tensor(rng.normal(shape, dtype=np.float64) + 0.5, requires_grad=True)
            for _ in range(nargs)]

    def loss_tensor():
        return T.reduce_sum(T.mul(fn(*args), Tensor(weights)))

    weights = rng.normal(fn(*args).shape, dtype=np.float64)
    grads = T.backward(loss_tensor())
    for arg in args:
        fd = fd_gradient(lambda: loss_tensor().item(), arg.data)
        assert max_rel_err(grads[arg].data, fd) < 1e-6, name


def test_relu_gradient_away_from_kink():
    rng = Rng(11)
    x = Tensor(np.sign(rng.normal((4, 4), dtype=np.float64)) * (0.5 + rng.uniform(0, 1, (4, 4))),
               requires_grad=True)
    w = rng.normal((4, 4), dtype=np.float64)
    loss = T.reduce_sum(T.mul(T.relu(x), Tensor(w)))
    grads = T.backward(loss)
    fd = fd_gradient(lambda: T.reduce_sum(T.mul(T.relu(x), Tensor(w))).item(), x.data)
    assert max_rel_err(grads[x].data, fd) < 1e-6


def test_composite_gradient_matches_fd():
    """A conv + matmul + nonlinearity composite, the [DERIVED] FD oracle."""
    rng = Rng(5)
    x = Tensor(rng.normal((2, 6, 6), dtype=np.float64), requires_grad=True)
    k = Tensor(rng.normal((3, 2, 3, 3), dtype=np.float64) * 0.5, requires_grad=True)
    b = Tensor(rng.normal((3,), dtype=np.float64) * 0.1, requires_grad=True)
    w = Tensor(rng.normal((3 * 3 * 3, 4), dtype=np.float64) * 0.3, requires_grad=True)

    def loss_t():
        h = T.conv2d(x, k, b, stride=2, pad=1)
        h = T.sigmoid(h)
        flat = T.reshape(h, (1, 27))
        out = T.matmul(flat, w)
        return T.reduce_sum(T.mul(out, out))

    grads = T.backward(loss_t())
    for leaf in (x, k, b, w):
        fd = fd_gradient(lambda: loss_t().item(), leaf.data)
        assert max_rel_err(grads[leaf].data, fd) < 1e-6


def test_bilinear_sample_gradient():
    rng = Rng(9)
    fmap = Tensor(rng.normal((3, 5, 5), dtype=np.float64), requires_grad=True)
    ys = np.array([0.3, 2.7, 3.9, 1.0])
    xs = np.array([1.1, 0.0, 4.0, 2.5])
    w = rng.normal((3, 4), dtype=np.float64)

    def loss_t():
        return T.reduce_sum(T.mul(T.bilinear_sample(fmap, ys, xs), Tensor(w)))

    grads = T.backward(loss_t())
    fd = fd_gradient(lambda: loss_t().item(), fmap.data)
    assert max_rel_err(grads[fmap].data, fd) < 1e-6


def test_take_narrow_permute_concat_gradients():
    rng = Rng(13)
    x = Tensor(rng.normal((5, 3), dtype=np.float64), requires_grad=True)
    y = Tensor(rng.normal((5, 3), dtype=np.float64), requires_grad=True)
    w = rng.normal((2, 6), dtype=np.float64)

    def loss_t():
        cat = T.concat([x, y], axis=1)               # [5, 6]
        picked = T.take(cat, np.array([1, 3]))       # [2, 6]
        per = T.permute(picked, (1, 0))              # [6, 2]
        nar = T.narrow(per, 0, 0, 6)
        return T.reduce_sum(T.mul(T.permute(nar, (1, 0)), Tensor(w)))

    grads = T.backward(loss_t())
    for leaf in (x, y):
        fd = fd_gradient(lambda: loss_t().item(), leaf.data)
        assert max_rel_err(grads[leaf].data, fd) < 1e-6


def test_max_reduce_gradient_unique_max():
    x = Tensor(np.array([[1.0, 5.0, 2.0], [7.0, 0.0, 3.0]]), requires_grad=True)
    grads = T.backward(T.reduce_sum(T.reduce_max(x, axis=1)))
    np.testing.assert_array_equal(grads[x].data, [[0, 1, 0], [1, 0, 0]])


class TestRng:
    def test_same_seed_same_stream(self):
        a = Rng(123).normal((50,))
        b = Rng(123).normal((50,))
        np.testing.assert_array_equal(a, b)

    def test_normal_statistics_1e5(self):
        samples = Rng(7).normal((100_000,), dtype=np.float64)
        assert -0.02 <= samples.mean() <= 0.02
        assert 0.99 <= samples.std() <= 1.01

    def test_uniform_range(self):
        samples = Rng(8).uniform(0.1, 2.0, (10_000,))
        assert samples.min() >= 0.1
        assert samples.max() < 2.0

    def test_uniform_bad_range_rejected(self):
        with pytest.raises(TensorError):
            Rng(0).uniform(2.0, 0.1, (3,))
        with pytest.raises(TensorError):
            Rng(0).uniform(1.0, 1.0)

    def test_spawned_streams_differ(self):
        root = Rng(42)
        a = root.spawn(1).normal((100,))
        b = root.spawn(2).normal((100,))
        assert not np.array_equal(a, b)

    def test_clone_preserves_position(self):
        rng = Rng(3)
        rng.normal((10,))
        clone = rng.clone()
        np.testing.assert_array_equal(rng.normal((5,)), clone.normal((5,)))

    def test_forward_backward_bit_identical_across_runs(self):
        def run():
            rng = Rng(99)
            x = Tensor(rng.normal((3, 8, 8), dtype=np.float64), requires_grad=True)
            k = Tensor(rng.normal((4, 3, 3, 3), dtype=np.float64), requires_grad=True)
            out = T.relu(T.conv2d(x, k, stride=2, pad=1))
            loss = T.reduce_sum(T.mul(out, out))
            grads = T.backward(loss)
            return loss.item(), grads[x].data.copy(), grads[k].data.copy()

        l1, gx1, gk1 = run()
        l2, gx2, gk2 = run()
        assert l1 == l2
        np.testing.assert_array_equal(gx1, gx2)
        np.testing.assert_array_equal(gk1, gk2)


class TestTensorMisc:
    def test_rng_normal_tensor_wrapper(self):
        t = T.rng_normal(Rng(1), (2, 3))
        assert isinstance(t, Tensor) and t.shape == (2, 3)

    def test_item_requires_single_element(self):
        with pytest.raises(TensorError):
            Tensor([1.0, 2.0]).item()

    def test_assert_finite(self):
        Tensor([1.0, 2.0]).assert_finite("ok")
        with pytest.raises(TensorError, match="loss"):
            Tensor([np.nan]).assert_finite("loss")

    def test_detach_cuts_graph(self):
        x = Tensor(np.array(2.0, dtype=np.float64), requires_grad=True)
        y = T.mul(x, x).detach()
        z = T.mul(y, y)
        with pytest.raises(TensorError):
            T.backward(z)  # no trainable parents reachable -> detached loss

    def test_broadcast_to_grad_sums(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        b = T.broadcast_to(T.reshape(x, (2, 1)), (2, 4))
        grads = T.backward(T.reduce_sum(b))
        np.testing.assert_array_equal(grads[x].data, [4.0, 4.0])

    def test_corrupt_backward_hook(self):
        x = Tensor(np.array([1.0, -1.0]), requires_grad=True)
        with T.corrupt_backward("relu", scale=2.0):
            grads = T.backward(T.reduce_sum(T.relu(x)))
        np.testing.assert_array_equal(grads[x].data, [2.0, 0.0])
        grads = T.backward(T.reduce_sum(T.relu(x)))
        np.testing.assert_array_equal(grads[x].data, [1.0, 0.0])
