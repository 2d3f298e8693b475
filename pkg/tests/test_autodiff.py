from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcases import PRIMITIVES, case
from usbench import autodiff as ad
from usbench.errors import ShapeError, UsageError


def philox(seed):
    return np.random.Generator(np.random.Philox(seed))


def naive_conv1d(x, w, b, stride, padding):
    n, c, length = x.shape
    o, _, k = w.shape
    xp = np.zeros((n, c, length + 2 * padding))
    xp[:, :, padding : padding + length] = x
    lout = (length + 2 * padding - k) // stride + 1
    out = np.zeros((n, o, lout))
    for i in range(n):
        for oc in range(o):
            for t in range(lout):
                acc = b[oc]
                for ic in range(c):
                    for j in range(k):
                        acc += w[oc, ic, j] * xp[i, ic, t * stride + j]
                out[i, oc, t] = acc
    return out


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestForward:
    def test_conv_output_length(self):
        y = ad.conv1d(np.zeros((1, 1, 10)), np.zeros((1, 1, 3)))
        assert y.shape == (1, 1, 8)

    def test_softmax_constant(self):
        np.testing.assert_allclose(ad.softmax(np.full(6, 3.0)).data, np.full(6, 1 / 6), rtol=1e-15)

    def test_matmul_against_triple_loop(self):
        rng = philox(0)
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 2))
        np.testing.assert_allclose(ad.matmul(a, b).data, naive_matmul(a, b), rtol=1e-14)

    @settings(max_examples=120, deadline=None)
    @given(
        n=st.integers(1, 3), c=st.integers(1, 4), o=st.integers(1, 4), length=st.integers(1, 20),
        k=st.integers(1, 6), stride=st.integers(1, 4), padding=st.integers(0, 3), seed=st.integers(0, 2**16),
    )
    def test_conv1d_matches_naive(self, n, c, o, length, k, stride, padding, seed):
        if length + 2 * padding < k:
            with pytest.raises(ShapeError):
                ad.conv1d(np.zeros((n, c, length)), np.zeros((o, c, k)), padding=padding)
            return
        rng = philox(seed)
        x, w, b = rng.normal(size=(n, c, length)), rng.normal(size=(o, c, k)), rng.normal(size=o)
        got = ad.conv1d(x, w, b, stride=stride, padding=padding).data
        np.testing.assert_allclose(got, naive_conv1d(x, w, b, stride, padding), rtol=1e-12, atol=1e-12)

    def test_max_pool(self):
        x = np.array([[[1.0, 3.0, 2.0, 5.0, 4.0]]])
        np.testing.assert_array_equal(ad.max_pool1d(x, 2).data, [[[3.0, 5.0]]])
        np.testing.assert_array_equal(ad.max_pool1d(x, 3, stride=1).data, [[[3.0, 5.0, 5.0]]])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 5), st.integers(2, 10), st.integers(0, 1000))
    def test_softmax_rows(self, rows, cols, seed):
        x = philox(seed).normal(scale=10, size=(rows, cols))
        s = ad.softmax(x).data
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(s > 0)

    def test_layer_norm_stats(self):
        y = ad.layer_norm(philox(1).normal(3, 2, size=(4, 16))).data
        np.testing.assert_allclose(y.mean(axis=-1), 0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=-1), 1, rtol=1e-4)

    def test_attention_uniform_when_keys_equal(self):
        q = philox(2).normal(size=(1, 3, 4))
        k = np.zeros((1, 3, 4))
        v = philox(3).normal(size=(1, 3, 4))
        out = ad.scaled_dot_product_attention(q, k, v, heads=2).data
        np.testing.assert_allclose(out, np.broadcast_to(v.mean(axis=1, keepdims=True), v.shape), atol=1e-12)

    def test_attention_matches_reference(self):
        rng = philox(4)
        q, k, v = (rng.normal(size=(2, 5, 8)) for _ in range(3))
        heads, dh = 2, 4
        ref = np.zeros_like(q)
        for b in range(2):
            for h in range(heads):
                sl = slice(h * dh, (h + 1) * dh)
                s = q[b, :, sl] @ k[b, :, sl].T / math.sqrt(dh)
                p = np.exp(s - s.max(axis=1, keepdims=True))
                p /= p.sum(axis=1, keepdims=True)
                ref[b, :, sl] = p @ v[b, :, sl]
        np.testing.assert_allclose(ad.scaled_dot_product_attention(q, k, v, heads).data, ref, atol=1e-12)

    def test_heads_must_divide_width(self):
        with pytest.raises(ShapeError, match="heads"):
            ad.scaled_dot_product_attention(np.zeros((1, 2, 6)), np.zeros((1, 2, 6)), np.zeros((1, 2, 6)), 4)

    @pytest.mark.parametrize(
        "op",
        [
            lambda: ad.add(np.zeros((2, 3)), np.zeros((4,))),
            lambda: ad.matmul(np.zeros((2, 3)), np.zeros((2, 3))),
            lambda: ad.dense(np.zeros((2, 3)), np.zeros((4, 5))),
            lambda: ad.conv1d(np.zeros((1, 2, 10)), np.zeros((1, 3, 3))),
            lambda: ad.concat([np.zeros((2, 3)), np.zeros((3, 3))], axis=1),
            lambda: ad.scaled_dot_product_attention(np.zeros((1, 2, 8)), np.zeros((1, 3, 6)), np.zeros((1, 3, 6)), 2),
        ],
    )
    def test_shape_errors_name_both_shapes(self, op):
        with pytest.raises(ShapeError) as err:
            op()
        assert len(err.value.shapes) >= 2
        assert err.value.op in str(err.value)


class TestDropout:
    def test_eval_identity(self):
        x = philox(0).normal(size=(3, 4))
        np.testing.assert_array_equal(ad.dropout(x, 0.5, False).data, x)

    def test_rate_zero_identity(self):
        x = philox(0).normal(size=(3, 4))
        np.testing.assert_array_equal(ad.dropout(x, 0.0, True, philox(1)).data, x)

    def test_inverted_scaling(self):
        y = ad.dropout(np.ones(100000), 0.25, True, philox(2)).data
        assert set(np.unique(y)) <= {0.0, 1 / 0.75}
        assert abs(y.mean() - 1) < 0.02

    def test_needs_rng_in_training(self):
        with pytest.raises(UsageError):
            ad.dropout(np.ones(3), 0.5, True, None)

    @pytest.mark.parametrize("rate", [-0.1, 1.0])
    def test_rate_range(self, rate):
        with pytest.raises(ValueError):
            ad.dropout(np.ones(3), rate, True, philox(0))


class TestCrossEntropy:
    def test_uniform(self):
        loss = ad.cross_entropy(np.zeros((4, 6)), [0, 1, 2, 5])
        assert loss.data == pytest.approx(math.log(6), rel=1e-15)

    def test_saturated(self):
        logits = np.zeros((3, 6))
        labels = np.array([1, 4, 0])
        logits[np.arange(3), labels] = 30.0
        assert float(ad.cross_entropy(logits, labels).data) < 1e-9

    def test_against_logsumexp_reference(self):
        rng = philox(7)
        logits = rng.normal(scale=5, size=(16, 6))
        labels = rng.integers(0, 6, size=16)
        ref = np.mean([math.log(sum(math.exp(v) for v in row)) - row[y] for row, y in zip(logits, labels)])
        assert float(ad.cross_entropy(logits, labels).data) == pytest.approx(ref, abs=1e-12)

    def test_bad_label_names_index(self):
        with pytest.raises(ValueError, match="index 2"):
            ad.cross_entropy(np.zeros((3, 4)), [0, 1, 4])

    def test_large_logits_stable(self):
        loss = ad.cross_entropy(np.array([[1000.0, 0.0]]), [1])
        assert float(loss.data) == pytest.approx(1000.0)


class TestBackward:
    def test_square(self):
        w = ad.Tensor([1.0, -2.0, 3.0], requires_grad=True)
        ad.backward(ad.reduce_sum(ad.mul(w, w)))
        np.testing.assert_array_equal(w.grad, [2.0, -4.0, 6.0])

    def test_constants_get_no_grad(self):
        w = ad.Tensor([1.0, 2.0], requires_grad=True)
        c = ad.Tensor([3.0, 4.0])
        ad.backward(ad.reduce_sum(ad.mul(w, c)))
        assert c.grad is None
        np.testing.assert_array_equal(w.grad, [3.0, 4.0])

    def test_non_scalar_rejected(self):
        w = ad.Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(UsageError):
            ad.backward(ad.mul(w, 2.0))

    def test_shared_subexpression_accumulates(self):
        w = ad.Tensor(2.0, requires_grad=True)
        y = ad.mul(w, w)
        ad.backward(ad.add(y, y))  # 2 w^2
        assert float(w.grad) == 8.0

    def test_tape_consumed_once(self):
        w = ad.Tensor([1.0], requires_grad=True)
        tape = ad.Tape.record(ad.reduce_sum(ad.mul(w, w)))
        tape.replay(np.ones(()))
        assert tape.consumed
        with pytest.raises(UsageError):
            tape.replay(np.ones(()))

    def test_tape_is_topological(self):
        w = ad.Tensor([1.0, 2.0], requires_grad=True)
        loss = ad.reduce_sum(ad.relu(ad.mul(w, 3.0)))
        tape = ad.Tape.record(loss)
        pos = {id(n): i for i, n in enumerate(tape.nodes)}
        for node in tape.nodes:
            for parent in node._parents:
                if id(parent) in pos:
                    assert pos[id(parent)] < pos[id(node)]
        assert len(pos) == len(tape.nodes)

    def test_deterministic(self):
        def run():
            fn, params = case("attention", philox(5))
            ad.backward(fn())
            return [p.grad for p in params]

        for a, b in zip(run(), run()):
            np.testing.assert_array_equal(a, b)


class TestGradcheck:
    @pytest.mark.parametrize("name", PRIMITIVES)
    def test_primitive(self, name):
        fn, params = case(name, philox(0))
        assert ad.gradcheck(fn, params) < 1e-4

    def test_dense_tight(self):
        fn, params = case("dense", philox(3))
        assert ad.gradcheck(fn, params) < 1e-6

    def test_detects_wrong_gradient(self):
        w = ad.Tensor([0.3, -0.7], requires_grad=True)

        def broken():
            out = ad.mul(w, w)
            out._backward = lambda g: (g * w.data, None)  # missing factor 2
            return ad.reduce_sum(out)

        assert ad.gradcheck(broken, [w]) > 0.4

    def test_subsampled(self):
        fn, params = case("conv1d", philox(0))
        assert ad.gradcheck(fn, params, max_entries=3, rng=philox(1)) < 1e-4


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        rng = philox(0)
        params = {"a.weight": rng.normal(size=(3, 4)), "a.bias": rng.normal(size=4), "s": np.array(2.5)}
        ad.save_checkpoint(params, tmp_path / "ck", extra={"note": "x"})
        loaded, meta = ad.load_checkpoint(tmp_path / "ck")
        assert list(loaded) == list(params)
        for k in params:
            np.testing.assert_array_equal(loaded[k], params[k])
        assert meta["note"] == "x"

    def test_layout_is_little_endian_doubles_in_order(self, tmp_path):
        params = {"x": np.array([1.0, 2.0]), "y": np.array([[3.0]])}
        ad.save_checkpoint(params, tmp_path / "ck")
        raw = (tmp_path / "ck.f64").read_bytes()
        np.testing.assert_array_equal(np.frombuffer(raw, "<f8"), [1.0, 2.0, 3.0])

    def test_truncated(self, tmp_path):
        ad.save_checkpoint({"x": np.zeros(4)}, tmp_path / "ck")
        (tmp_path / "ck.f64").write_bytes(b"\0" * 16)
        with pytest.raises(ValueError, match="truncated"):
            ad.load_checkpoint(tmp_path / "ck")
