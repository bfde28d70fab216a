"""Tensor engine: op semantics, backward correctness, invariants."""

import logging

import numpy as np
import pytest

import melink.tensor as T
from melink.errors import ConfigError, DimensionError, UsageError
from melink.tensor import Tensor, backward, no_grad

from oracles import naive_matmul, naive_mha, central_difference


def fd_rel_error(build, arrays, eps=1e-5):
    """Max relative error between reverse-mode and central-difference grads
    for a scalar-valued graph over float64 inputs."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build(*tensors)
    backward(loss)
    worst = 0.0
    for a, t in zip(arrays, tensors):
        g_ad = t.grad.copy()

        def f():
            with no_grad():
                return float(build(*[Tensor(x) for x in arrays]).data)

        g_fd = central_difference(f, a, eps=eps)
        rel = np.abs(g_ad - g_fd) / np.maximum(1e-8, np.abs(g_ad) + np.abs(g_fd))
        worst = max(worst, float(rel.max()))
    return worst


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        out = T.matmul(Tensor(np.eye(2)), a)
        np.testing.assert_array_equal(out.data, a.data)

    def test_projector_selects_rows(self):
        proj = Tensor(np.array([[1.0, 0.0], [0.0, 0.0]]))
        b = Tensor(np.array([[5.0, 6.0], [7.0, 8.0]]))
        out = T.matmul(proj, b)
        np.testing.assert_array_equal(out.data, [[5.0, 6.0], [0.0, 0.0]])

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        out = T.matmul(Tensor(a), Tensor(b))
        np.testing.assert_allclose(out.data, naive_matmul(a, b), atol=1e-6)

    def test_shape_mismatch_names_both(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


class TestSoftmax:
    def test_symmetry(self):
        out = T.softmax_rows(Tensor(np.array([[0.0, 0.0]])))
        np.testing.assert_allclose(out.data, [[0.5, 0.5]])

    def test_large_values_no_overflow(self):
        out = T.softmax_rows(Tensor(np.array([[1000.0, 0.0]])))
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data[0, 0], 1.0, atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        out = T.softmax_rows(Tensor(rng.normal(size=(5, 7)).astype(np.float32)))
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-6)
        out64 = T.softmax_rows(Tensor(rng.normal(size=(5, 7))))
        np.testing.assert_allclose(out64.data.sum(axis=1), 1.0, atol=1e-12)


class TestElementwise:
    def test_concat(self):
        out = T.concat_cols([Tensor(np.array([[1.0, 2.0]])), Tensor(np.array([[3.0]]))])
        np.testing.assert_array_equal(out.data, [[1.0, 2.0, 3.0]])

    def test_l2_normalize(self):
        out = T.l2_normalize_rows(Tensor(np.array([[3.0, 4.0]])))
        np.testing.assert_allclose(out.data, [[0.6, 0.8]], atol=1e-9)

    def test_mean_rows(self):
        out = T.mean_rows(Tensor(np.array([[1.0, 3.0], [5.0, 7.0]])))
        np.testing.assert_array_equal(out.data, [[3.0, 5.0]])

    def test_add_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.add(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3))))


class TestCosine:
    def test_self_similarity(self):
        v = Tensor(np.array([[0.3, -1.2, 4.0]]))
        assert T.cosine_similarity(v, v).item() == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal(self):
        c = T.cosine_similarity(Tensor(np.array([[1.0, 0.0]])),
                                Tensor(np.array([[0.0, 1.0]])))
        assert c.item() == pytest.approx(0.0, abs=1e-12)

    def test_half_angle(self):
        c = T.cosine_similarity(Tensor(np.array([[1.0, 1.0]])),
                                Tensor(np.array([[1.0, 0.0]])))
        assert c.item() == pytest.approx(0.7071, abs=1e-4)

    def test_zero_vector_warns_and_returns_zero(self, caplog):
        with caplog.at_level(logging.WARNING, logger="melink.tensor"):
            c = T.cosine_similarity(Tensor(np.zeros((1, 3))),
                                    Tensor(np.array([[1.0, 0.0, 0.0]])))
        assert c.item() == pytest.approx(0.0, abs=1e-9)
        assert any("zero vector" in r.message for r in caplog.records)


class TestDropout:
    def test_zero_rate_is_identity(self):
        x = Tensor(np.ones((4, 4)))
        out = T.dropout(x, 0.0, np.random.default_rng(0), training=True)
        np.testing.assert_array_equal(out.data, x.data)

    def test_eval_mode_is_identity(self):
        x = Tensor(np.ones((4, 4)))
        out = T.dropout(x, 0.9, np.random.default_rng(0), training=False)
        np.testing.assert_array_equal(out.data, x.data)

    def test_expected_zero_fraction(self):
        x = Tensor(np.ones((100, 100)))
        out = T.dropout(x, 0.4, np.random.default_rng(42), training=True)
        frac = float((out.data == 0).mean())
        assert abs(frac - 0.4) < 0.05
        kept = out.data[out.data != 0]
        np.testing.assert_allclose(kept, 1.0 / 0.6, rtol=1e-6)

    def test_bad_rate(self):
        with pytest.raises(ConfigError):
            T.dropout(Tensor(np.ones((2, 2))), 1.0, np.random.default_rng(0), True)


class TestBackward:
    def test_square_sum(self):
        x = Tensor(np.array([[3.0]]), requires_grad=True)
        loss = T.sum_all(T.mul(x, x))
        backward(loss)
        np.testing.assert_allclose(x.grad, [[6.0]])

    def test_cosine_with_self_is_constant(self):
        a = Tensor(np.array([[1.0, 2.0, 3.0]]), requires_grad=True)
        loss = T.cosine_similarity(a, a)
        backward(loss)
        np.testing.assert_allclose(a.grad, np.zeros((1, 3)), atol=1e-9)

    def test_accumulation_across_uses(self):
        x0 = np.array([[1.0, -2.0], [0.5, 3.0]])
        w = np.random.default_rng(3).normal(size=(2, 2))

        x = Tensor(x0.copy(), requires_grad=True)
        both = T.sum_all(T.add(T.matmul(x, Tensor(w)), T.mul(x, x)))
        backward(both)
        combined = x.grad.copy()

        xa = Tensor(x0.copy(), requires_grad=True)
        backward(T.sum_all(T.matmul(xa, Tensor(w))))
        xb = Tensor(x0.copy(), requires_grad=True)
        backward(T.sum_all(T.mul(xb, xb)))
        np.testing.assert_allclose(combined, xa.grad + xb.grad, atol=1e-12)

    def test_nonscalar_rejected(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(UsageError):
            backward(T.mul(x, x))

    def test_nonparticipating_leaf_gets_zero_grad(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        unused = Tensor(np.ones((3, 3)), requires_grad=True)
        backward(T.sum_all(x), leaves=[x, unused])
        np.testing.assert_array_equal(unused.grad, np.zeros((3, 3)))


class TestFdPerOp:
    """Every differentiable op matches central differences (rel err < 1e-4)."""

    rng = np.random.default_rng(9)

    def check(self, build, arrays):
        assert fd_rel_error(build, arrays) < 1e-4

    def test_matmul(self):
        self.check(lambda a, b: T.sum_all(T.mul(T.matmul(a, b), T.matmul(a, b))),
                   [self.rng.normal(size=(3, 4)), self.rng.normal(size=(4, 2))])

    def test_softmax(self):
        w = Tensor(self.rng.normal(size=(3, 5)))
        self.check(lambda a: T.sum_all(T.mul(T.softmax_rows(a), w)),
                   [self.rng.normal(size=(3, 5))])

    def test_attend(self):
        self.check(lambda p, v: T.sum_all(T.mul(T.attend(p, v), T.attend(p, v))),
                   [self.rng.random(size=(2, 4)), self.rng.normal(size=(4, 3))])

    def test_attention_heads(self):
        w = Tensor(self.rng.normal(size=(3, 8)))
        self.check(
            lambda q, k, v: T.sum_all(T.mul(T.attention_heads(q, k, v, 2), w)),
            [self.rng.normal(size=(3, 8)), self.rng.normal(size=(5, 8)),
             self.rng.normal(size=(5, 8))])

    def test_normalize_and_reductions(self):
        w = Tensor(self.rng.normal(size=(3, 4)))
        self.check(lambda a: T.sum_all(T.mul(T.l2_normalize_rows(a), w)),
                   [self.rng.normal(size=(3, 4))])
        self.check(lambda a: T.sum_all(T.exp(T.mean_rows(a))),
                   [self.rng.normal(size=(3, 4))])
        self.check(lambda a: T.mean_all(T.log(T.sum_cols(T.exp(a)))),
                   [self.rng.normal(size=(3, 4))])

    def test_shapes_and_arithmetic(self):
        a0 = self.rng.normal(size=(3, 4))
        b0 = self.rng.normal(size=(3, 4))
        self.check(lambda a, b: T.sum_all(T.mul(T.sub(a, b), T.add(a, b))), [a0, b0])
        self.check(lambda a, b: T.sum_all(T.concat_cols([T.slice_cols(a, 1, 3),
                                                         T.slice_rows(b, 0, 3)])),
                   [self.rng.normal(size=(3, 4)), self.rng.normal(size=(4, 2))])
        bias = self.rng.normal(size=(1, 4))
        self.check(lambda a, b: T.sum_all(T.sigmoid(T.add_rowwise(a, b))), [a0, bias])
        self.check(lambda a, s: T.sum_all(T.relu(T.scale(a, s))),
                   [a0 + 3.0, np.asarray(0.7)])
        self.check(lambda a: T.sum_all(T.concat_rows([a, T.transpose(a)])),
                   [self.rng.normal(size=(4, 4))])
        sc = np.asarray([[0.3]])
        self.check(lambda a, s: T.sum_all(T.sub(a, s)), [a0, sc])


class TestAttentionFusedOp:
    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(5)
        d, h = 8, 2
        x, y = rng.normal(size=(2, d)), rng.normal(size=(3, d))
        wq, wk, wv, wo = (rng.normal(size=(d, d)) for _ in range(4))
        q = T.matmul(Tensor(x), Tensor(wq))
        k = T.matmul(Tensor(y), Tensor(wk))
        v = T.matmul(Tensor(y), Tensor(wv))
        out = T.matmul(T.attention_heads(q, k, v, h), Tensor(wo))
        expected = naive_mha(x, y, wq, wk, wv, wo, h)
        np.testing.assert_allclose(out.data, expected, atol=1e-5)

    def test_bitwise_permutation_invariance_float64(self):
        rng = np.random.default_rng(6)
        q = Tensor(rng.normal(size=(3, 8)))
        kv = rng.normal(size=(5, 8))
        out1 = T.attention_heads(q, Tensor(kv), Tensor(kv), 2)
        perm = rng.permutation(5)
        out2 = T.attention_heads(q, Tensor(kv[perm]), Tensor(kv[perm]), 2)
        assert np.array_equal(out1.data, out2.data)

    def test_probs_rows_sum_to_one(self):
        rng = np.random.default_rng(8)
        cap: list[np.ndarray] = []
        T.attention_heads(Tensor(rng.normal(size=(3, 8))),
                          Tensor(rng.normal(size=(4, 8))),
                          Tensor(rng.normal(size=(4, 8))), 4, capture=cap)
        probs = cap[0]
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_finiteness_check_flag():
    x = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    T.CHECK_FINITE = True
    try:
        out = T.exp(x)                    # finite: passes
        assert np.all(np.isfinite(out.data))
        with pytest.raises(T.NumericError):
            T.exp(Tensor(np.array([[1e308, 1e308]])))   # overflows to inf
    finally:
        T.CHECK_FINITE = False


def test_determinism_same_ops_same_bits():
    rng = np.random.default_rng(12)
    a = rng.normal(size=(4, 4)).astype(np.float32)

    def run():
        x = Tensor(a.copy(), requires_grad=True)
        loss = T.sum_all(T.softmax_rows(T.matmul(x, x)))
        backward(loss)
        return x.grad.copy()

    g1, g2 = run(), run()
    assert np.array_equal(g1, g2)
