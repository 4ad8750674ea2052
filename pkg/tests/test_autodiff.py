"""Numeric kernel: forward contracts and finite-difference gradient checks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gvr import autodiff as ad
from gvr.errors import ContractViolation, DegenerateInputError, DimensionError, UsageError


def t(data, rg=False):
    return ad.tensor(np.asarray(data, dtype=np.float64), requires_grad=rg)


def check(f, params, tol, eps=1e-5, **kw):
    report = ad.grad_check(f, params, eps=eps, **kw)
    assert report.max_rel_err < tol, f"worst: {report.worst}"
    return report


class TestMatmul:
    def test_identity(self):
        a = t([[1.0, 2.0], [3.0, 4.0]])
        out = ad.matmul(t(np.eye(2)), a)
        np.testing.assert_allclose(out.data, [[1, 2], [3, 4]])

    def test_selection(self):
        out = ad.matmul(t([[1.0, 0.0]]), t([[0.0], [5.0]]))
        np.testing.assert_allclose(out.data, [[0.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            ad.matmul(t(np.ones((2, 3))), t(np.ones((2, 2))))

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(7)
        a = t(rng.normal(size=(3, 4)), rg=True)
        b = t(rng.normal(size=(4, 2)), rg=True)
        w = rng.normal(size=(3, 2))
        check(lambda: ad.weighted_sum(ad.matmul(a, b), w), {"a": a, "b": b}, 1e-6)


class TestLayerNorm:
    def test_constant_row_maps_to_zero(self):
        out = ad.layer_norm(t([1.0, 1.0, 1.0]), t(np.ones(3)), t(np.zeros(3)))
        np.testing.assert_allclose(out.data, np.zeros(3), atol=1e-6)

    def test_already_normalized_row(self):
        out = ad.layer_norm(t([-1.0, 1.0]), t(np.ones(2)), t(np.zeros(2)), eps=1e-12)
        np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-5)

    def test_empty_last_dim_rejected(self):
        with pytest.raises(DimensionError):
            ad.layer_norm(t(np.zeros((2, 0))), t(np.zeros(0)), t(np.zeros(0)))

    def test_rows_standardized_before_affine(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(5, 8))
        out = ad.layer_norm(t(x), t(np.ones(8)), t(np.zeros(8))).data
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-4)

    def test_gradient(self):
        rng = np.random.default_rng(11)
        x = t(rng.normal(size=(1, 6)), rg=True)
        g = t(rng.normal(size=6), rg=True)
        b = t(rng.normal(size=6), rg=True)
        w = rng.normal(size=(1, 6))
        check(lambda: ad.weighted_sum(ad.layer_norm(x, g, b), w), {"x": x, "g": g, "b": b}, 1e-5)


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(ad.softmax(t([0.0, 0.0])).data, [0.5, 0.5])

    def test_large_logits_stable(self):
        out = ad.softmax(t([1000.0, 0.0])).data
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-12)

    def test_closed_form(self):
        out = ad.softmax(t([math.log(1), math.log(2), math.log(3)])).data
        np.testing.assert_allclose(out, [1 / 6, 2 / 6, 3 / 6], atol=1e-12)

    @given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=12))
    @settings(max_examples=200, deadline=None)
    def test_rows_sum_to_one(self, logits):
        out = ad.softmax(t(logits)).data
        assert abs(out.sum() - 1.0) < 1e-6
        assert np.all(out >= 0.0)

    def test_gradient(self):
        rng = np.random.default_rng(5)
        x = t(rng.normal(size=(3, 5)), rg=True)
        w = rng.normal(size=(3, 5))
        check(lambda: ad.weighted_sum(ad.softmax(x), w), {"x": x}, 1e-6)

    def test_log_softmax_gradient(self):
        rng = np.random.default_rng(6)
        x = t(rng.normal(size=(3, 5)), rg=True)
        w = rng.normal(size=(3, 5))
        check(lambda: ad.weighted_sum(ad.log_softmax(x), w), {"x": x}, 1e-6)


class TestCosine:
    def test_self_similarity(self):
        v = t([1.0, 2.0, -3.0])
        assert ad.cosine_similarity(v, v).item() == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert ad.cosine_similarity(t([1.0, 0.0]), t([0.0, 1.0])).item() == pytest.approx(0.0, abs=1e-12)

    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
    @settings(max_examples=100, deadline=None)
    def test_scale_invariance(self, seed, alpha):
        rng = np.random.default_rng(seed)
        v, w = rng.normal(size=4), rng.normal(size=4)
        s1 = ad.cosine_similarity(t(alpha * v), t(w)).item()
        s2 = ad.cosine_similarity(t(v), t(w)).item()
        assert abs(s1 - s2) < 1e-9
        assert -1.0 - 1e-12 <= s1 <= 1.0 + 1e-12

    def test_zero_norm_rejected(self):
        with pytest.raises(DegenerateInputError):
            ad.cosine_similarity(t([0.0, 0.0]), t([1.0, 0.0]))

    def test_gradient_both_sides(self):
        rng = np.random.default_rng(9)
        u = t(rng.normal(size=7), rg=True)
        v = t(rng.normal(size=7), rg=True)
        check(lambda: ad.cosine_similarity(u, v), {"u": u, "v": v}, 1e-6)


class TestCrossEntropySoft:
    def test_perfect_match_one_hot(self):
        p = t([0.0, 1.0, 0.0])
        assert ad.cross_entropy_soft(p, [0.0, 1.0, 0.0]).item() == pytest.approx(0.0, abs=1e-12)

    def test_uniform_is_log_k(self):
        k = 5
        p = t(np.full(k, 1.0 / k))
        assert ad.cross_entropy_soft(p, np.full(k, 1.0 / k)).item() == pytest.approx(math.log(k), abs=1e-12)

    def test_hand_computed(self):
        # target (0.7, 0.3), pred uniform: 0.7*ln2 + 0.3*ln2 = ln2
        got = ad.cross_entropy_soft(t([0.5, 0.5]), [0.7, 0.3]).item()
        assert got == pytest.approx(math.log(2.0), abs=1e-12)

    def test_rejects_unnormalized(self):
        with pytest.raises(ContractViolation):
            ad.cross_entropy_soft(t([0.5, 0.6]), [0.5, 0.5])
        with pytest.raises(ContractViolation):
            ad.cross_entropy_soft(t([0.5, 0.5]), [0.9, 0.3])

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_lower_bounded_by_target_entropy(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 8))
        p = rng.dirichlet(np.ones(k))
        q = rng.dirichlet(np.ones(k))
        ce = ad.cross_entropy_soft(t(q), p).item()
        entropy = -(p * np.log(np.where(p > 0, p, 1.0))).sum()
        assert ce - entropy >= -1e-9


class TestGeluLinear:
    def test_gelu_zero(self):
        assert ad.gelu(t([0.0])).data[0] == 0.0

    def test_linear_identity(self):
        x = t([1.0, -2.0, 3.0])
        out = ad.linear(x, t(np.eye(3)), t(np.zeros(3)))
        np.testing.assert_allclose(out.data, x.data)

    def test_gradients(self):
        rng = np.random.default_rng(13)
        x = t(rng.normal(size=(2, 4)), rg=True)
        w = t(rng.normal(size=(4, 3)), rg=True)
        b = t(rng.normal(size=3), rg=True)
        wt = rng.normal(size=(2, 3))
        check(lambda: ad.weighted_sum(ad.gelu(ad.linear(x, w, b)), wt),
              {"x": x, "w": w, "b": b}, 1e-5)


class TestStructuralOps:
    def test_slice_concat_roundtrip_gradients(self):
        rng = np.random.default_rng(17)
        x = t(rng.normal(size=(4, 6)), rg=True)
        w = rng.normal(size=(4, 6))

        def f():
            parts = [ad.slice_cols(x, 0, 2), ad.slice_cols(x, 2, 6)]
            return ad.weighted_sum(ad.concat_cols(parts), w)

        check(f, {"x": x}, 1e-6)

    def test_repeat_rows_gradient(self):
        rng = np.random.default_rng(19)
        x = t(rng.normal(size=(2, 3)), rg=True)
        w = rng.normal(size=(6, 3))
        check(lambda: ad.weighted_sum(ad.repeat_rows(x, 3), w), {"x": x}, 1e-6)

    def test_repeat_interleave_layout(self):
        x = t([[1.0, 2.0], [3.0, 4.0]])
        out = ad.repeat_interleave_rows(x, 2).data
        np.testing.assert_allclose(out, [[1, 2], [1, 2], [3, 4], [3, 4]])

    def test_attend_texts_matches_loop(self):
        rng = np.random.default_rng(23)
        c, m, d, b = 3, 4, 5, 2
        texts = rng.normal(size=(c, m, d))
        w = t(rng.normal(size=(b * c, m)), rg=True)
        out = ad.attend_texts(w, texts).data
        for bi in range(b):
            for ci in range(c):
                expect = w.data[bi * c + ci] @ texts[ci]
                np.testing.assert_allclose(out[bi * c + ci], expect, atol=1e-12)
        wt = rng.normal(size=(b * c, d))
        check(lambda: ad.weighted_sum(ad.attend_texts(w, texts), wt), {"w": w}, 1e-6)

    def test_backward_requires_scalar(self):
        x = t(np.ones((2, 2)), rg=True)
        with pytest.raises(UsageError):
            ad.add(x, x).backward()

    def test_broadcast_restricted_to_suffix(self):
        a = t(np.ones((2, 3)))
        with pytest.raises(DimensionError):
            ad.add(a, t(np.ones(2)))


class TestGradCheckOracle:
    def test_sum_of_squares_analytic(self):
        rng = np.random.default_rng(29)
        w = ad.tensor(rng.normal(size=10), requires_grad=True)
        report = ad.grad_check(lambda: ad.sum_all(ad.mul(w, w)), {"w": w}, eps=1e-5)
        assert report.max_rel_err < 1e-8
        # analytic gradient of sum(w^2) is 2w
        ad.zero_grads([w])
        loss = ad.sum_all(ad.mul(w, w))
        loss.backward()
        np.testing.assert_allclose(w.grad, 2 * w.data, atol=1e-12)

    def test_softmax_ce_chain(self):
        rng = np.random.default_rng(31)
        x = ad.tensor(rng.normal(size=5), requires_grad=True)
        target = rng.dirichlet(np.ones(5))
        check(lambda: ad.cross_entropy_soft(ad.softmax(x), target), {"x": x}, 1e-6)

    def test_eps_must_be_positive(self):
        w = ad.tensor([1.0], requires_grad=True)
        with pytest.raises(ContractViolation):
            ad.grad_check(lambda: ad.sum_all(w), {"w": w}, eps=0.0)


@pytest.mark.parametrize("seed", range(20))
def test_randomized_op_gradients(seed):
    """Composite expression touching every differentiable op, per seed."""
    rng = np.random.default_rng(seed)
    x = t(rng.normal(size=(3, 4)), rg=True)
    w1 = t(rng.normal(size=(4, 4)), rg=True)
    b1 = t(rng.normal(size=4), rg=True)
    g = t(rng.normal(size=4) * 0.1 + 1.0, rg=True)
    be = t(rng.normal(size=4) * 0.1, rg=True)
    wt = rng.normal(size=(3, 4))

    def f():
        h = ad.linear(x, w1, b1)
        h = ad.layer_norm(h, g, be)
        h = ad.gelu(h)
        h = ad.l2_normalize_rows(h)
        h = ad.softmax(h)
        return ad.weighted_sum(h, wt)

    check(f, {"x": x, "w1": w1, "b1": b1, "g": g, "be": be}, 1e-4)
