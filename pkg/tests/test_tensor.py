import threading

import mpmath
import numpy as np
import pytest

from iiht import tensor as tn
from iiht.errors import ContractError, DimensionError, NumericError
from iiht.gradcheck import check_function
from iiht.tensor import Tensor


def naive_matmul(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for p in range(k):
                out[i, j] += a[i, p] * b[p, j]
    return out


class TestMatmul:
    def test_identity(self):
        x = Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal((Tensor(np.eye(2)) @ x).data, x.data)

    def test_zero_annihilates(self, rng):
        out = Tensor(np.zeros((2, 3))) @ Tensor(rng.normal(size=(3, 4)))
        assert out.shape == (2, 4)
        assert not out.data.any()

    def test_matches_triple_loop(self, rng):
        a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        np.testing.assert_allclose((Tensor(a) @ Tensor(b)).data, naive_matmul(a, b), atol=1e-12, rtol=0)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


class TestSoftmax:
    def test_uniform_logits(self):
        np.testing.assert_allclose(tn.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_shift_invariance_exact(self):
        # dyadic values: the shift is exact in floating point, so outputs are bit-identical
        x = np.array([0.0, 0.5, 1.25, -2.0])
        assert np.array_equal(tn.softmax(Tensor(x + 7.0)).data, tn.softmax(Tensor(x)).data)

    def test_shift_invariance_random(self, rng):
        x = rng.normal(size=5)
        np.testing.assert_allclose(tn.softmax(Tensor(x + 123.4)).data, tn.softmax(Tensor(x)).data,
                                   rtol=1e-12, atol=0)

    def test_extended_precision_oracle(self):
        mpmath.mp.dps = 50
        e = [mpmath.exp(v) for v in (1, 2, 3)]
        expected = [float(v / sum(e)) for v in e]
        np.testing.assert_allclose(tn.softmax(Tensor([1.0, 2.0, 3.0])).data, expected, rtol=1e-15)

    def test_large_logits_do_not_overflow(self):
        out = tn.softmax(Tensor([1000.0, 1000.0, -1000.0])).data
        np.testing.assert_allclose(out, [0.5, 0.5, 0.0], atol=1e-15)

    def test_nonfinite_input(self):
        with pytest.raises(NumericError):
            tn.softmax(Tensor([0.0, np.nan]))
        with pytest.raises(NumericError):
            tn.log_softmax(Tensor([np.inf, 0.0]))


class TestBackward:
    def test_sum_gives_ones(self):
        w = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        tn.backward(w.sum())
        np.testing.assert_array_equal(w.grad, [1.0, 1.0, 1.0])

    def test_square(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        tn.backward((w * w).sum())
        np.testing.assert_array_equal(w.grad, [2.0, 4.0])

    def test_fan_out_accumulates(self):
        w = Tensor([3.0], requires_grad=True)
        y = w * 2.0
        tn.backward((y + y * y).sum())  # d/dw (2w + 4w²) = 2 + 8w
        np.testing.assert_allclose(w.grad, [26.0])

    def test_leaves_accumulate_across_calls(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        tn.backward(w.sum())
        tn.backward(w.sum())
        np.testing.assert_array_equal(w.grad, [2.0, 2.0])

    def test_no_grad_tensor_never_gets_grad(self):
        w = Tensor([1.0], requires_grad=True)
        c = Tensor([5.0])
        tn.backward((w * c).sum())
        assert c.grad is None

    def test_non_scalar_loss(self):
        with pytest.raises(ContractError):
            tn.backward(Tensor([1.0, 2.0], requires_grad=True) * 2.0)

    def test_graph_is_topological_and_unique(self, rng):
        a = Tensor(rng.normal(size=3), requires_grad=True)
        b = tn.tanh(a)
        c = b * a + tn.exp(b)
        loss = (c * c).sum()
        order = tn.graph(loss)
        pos = {id(n): i for i, n in enumerate(order)}
        assert len(pos) == len(order)
        for node in order:
            for p in node._parents:
                if p.requires_grad:
                    assert pos[id(p)] < pos[id(node)]

    def test_no_grad_context_is_thread_local(self):
        seen = []

        def worker():
            seen.append(tn.is_grad_enabled())

        with tn.no_grad():
            assert not tn.is_grad_enabled()
            th = threading.Thread(target=worker)
            th.start()
            th.join()
            y = Tensor([1.0], requires_grad=True) * 2.0
        assert seen == [True]
        assert not y.requires_grad
        assert tn.is_grad_enabled()

    def test_deep_chain_no_recursion_limit(self):
        w = Tensor([1.0], requires_grad=True)
        x = w
        for _ in range(5000):
            x = x * 1.0
        tn.backward(x.sum())
        assert w.grad[0] == 1.0


class TestElementwise:
    def test_relu(self):
        np.testing.assert_array_equal(tn.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])

    def test_layer_norm_constant_vector(self):
        out = tn.layer_norm(Tensor(np.full(4, 3.7))).data
        assert np.all(np.isfinite(out))
        np.testing.assert_array_equal(out, np.zeros(4))

    def test_dropout_eval_is_identity(self, rng):
        x = Tensor(rng.normal(size=10))
        assert tn.dropout(x, 0.5, train=False) is x

    def test_dropout_train_scales_kept(self, rng):
        x = Tensor(np.ones(1000))
        out = tn.dropout(x, 0.25, True, rng).data
        assert set(np.unique(out)) <= {0.0, 1 / 0.75}

    def test_dropout_needs_rng_in_training(self):
        with pytest.raises(ContractError):
            tn.dropout(Tensor([1.0]), 0.5, True)

    def test_masked_fill(self):
        out = tn.masked_fill(Tensor([1.0, 2.0, 3.0]), np.array([True, False, True]), -9.0)
        np.testing.assert_array_equal(out.data, [-9.0, 2.0, -9.0])

    def test_masked_fill_bad_mask(self):
        with pytest.raises(DimensionError):
            tn.masked_fill(Tensor(np.ones((2, 3))), np.ones((3, 2), dtype=bool), 0.0)

    def test_embedding_out_of_range(self):
        with pytest.raises(ContractError):
            tn.embedding(Tensor(np.ones((3, 2))), np.array([3]))

    def test_broadcast_error(self):
        with pytest.raises(DimensionError):
            Tensor(np.ones(3)) + Tensor(np.ones(4))

    def test_conv_identity_kernel(self, rng):
        x = rng.normal(size=(1, 1, 4, 5))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        np.testing.assert_array_equal(tn.conv2d(Tensor(x), Tensor(w), pad=1).data, x)

    def test_max_pool(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        np.testing.assert_array_equal(tn.max_pool2d(Tensor(x)).data[0, 0], [[5, 7], [13, 15]])


@pytest.mark.parametrize("trial", range(3))
def test_composite_graph_gradcheck(trial):
    rng = np.random.default_rng(trial)
    c = rng.normal(size=(3, 4))

    def fn(a, b):
        h = tn.tanh(a @ b)
        return (tn.layer_norm(h + tn.sigmoid(h)) * Tensor(c)).sum() + tn.log_softmax(h)[:, 1].mean()

    assert check_function(fn, [rng.normal(size=(3, 2)), rng.normal(size=(2, 4))]) < 1e-4


def test_forward_is_deterministic(rng):
    x = rng.normal(size=(4, 6))
    a = tn.softmax(Tensor(x) @ Tensor(x.T)).data
    b = tn.softmax(Tensor(x) @ Tensor(x.T)).data
    assert np.array_equal(a, b)
