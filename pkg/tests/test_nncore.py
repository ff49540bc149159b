import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unfairgen import nncore

from gradcases import KINDS, case_error


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("seed", range(6))
def test_gradients_match_finite_differences(kind, seed):
    assert case_error(kind, 1000 * KINDS.index(kind) + seed) < 1e-4


class TestForward:
    def test_identity_layer(self):
        mlp = nncore.Mlp((3, 3), ("identity",), [np.eye(3)], [np.zeros(3)])
        x = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(nncore.forward(mlp, x)[0], x)

    def test_zero_weights_sigmoid(self):
        mlp = nncore.Mlp((4, 2), ("sigmoid",), [np.zeros((4, 2))], [np.zeros(2)])
        np.testing.assert_array_equal(nncore.forward(mlp, np.ones((3, 4)))[0], 0.5)

    def test_matches_matrix_arithmetic(self):
        rng = np.random.default_rng(0)
        mlp = nncore.Mlp.init((3, 5, 2), ("tanh", "softplus"), rng)
        x = rng.normal(size=(4, 3))
        h = np.tanh(x @ mlp.weights[0] + mlp.biases[0])
        pre = h @ mlp.weights[1] + mlp.biases[1]
        np.testing.assert_allclose(nncore.forward(mlp, x)[0], np.log1p(np.exp(pre)), rtol=1e-12)

    def test_dimension_mismatch(self):
        mlp = nncore.Mlp.init((3, 2), ("tanh",), np.random.default_rng(0))
        with pytest.raises(ValueError):
            nncore.forward(mlp, np.ones((2, 4)))

    def test_non_finite_output(self):
        mlp = nncore.Mlp((1, 1), ("identity",), [np.array([[np.inf]])], [np.zeros(1)])
        with pytest.raises(FloatingPointError):
            nncore.forward(mlp, np.ones((1, 1)))

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            nncore.Mlp((2, 3), ("tanh",), [np.zeros((3, 2))], [np.zeros(3)])


class TestBackward:
    def test_zero_upstream_gives_zero(self):
        rng = np.random.default_rng(1)
        mlp = nncore.Mlp.init((3, 4, 2), ("tanh", "sigmoid"), rng)
        _, cache = nncore.forward(mlp, rng.normal(size=(5, 3)))
        grads, gx = nncore.backward(mlp, cache, np.zeros((5, 2)))
        assert all(np.all(g == 0) for g in grads) and np.all(gx == 0)

    def test_linear_layer_outer_product(self):
        rng = np.random.default_rng(2)
        mlp = nncore.Mlp.init((3, 2), ("identity",), rng)
        x, g = rng.normal(size=(1, 3)), rng.normal(size=(1, 2))
        _, cache = nncore.forward(mlp, x)
        grads, _ = nncore.backward(mlp, cache, g)
        np.testing.assert_allclose(grads[0], np.outer(x[0], g[0]))

    def test_stale_cache(self):
        mlp = nncore.Mlp.init((2, 2), ("tanh",), np.random.default_rng(0))
        _, cache = nncore.forward(mlp, np.ones((1, 2)))
        mlp.touch()
        with pytest.raises(nncore.StaleCacheError):
            nncore.backward(mlp, cache, np.ones((1, 2)))
        other = mlp.copy()
        _, cache = nncore.forward(other, np.ones((1, 2)))
        with pytest.raises(nncore.StaleCacheError):
            nncore.backward(mlp, cache, np.ones((1, 2)))


class TestAdam:
    def test_first_step_by_hand(self):
        w = np.array([1.0])
        opt = nncore.Adam(lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
        opt.step([w], [np.array([0.5])])
        m_hat = (0.1 * 0.5) / (1 - 0.9)
        v_hat = (0.001 * 0.25) / (1 - 0.999)
        assert w[0] == pytest.approx(1.0 - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8), abs=1e-15)

    def test_zero_gradient_no_change(self):
        w = np.array([1.0, -2.0])
        nncore.Adam(lr=0.5).step([w], [np.zeros(2)])
        np.testing.assert_array_equal(w, [1.0, -2.0])

    def test_quadratic_bowl_descends(self):
        w = np.array([1.0, -2.0, 0.5])
        opt = nncore.Adam(lr=1e-2)
        norms = []
        for _ in range(200):
            opt.step([w], [2 * w])
            norms.append(np.linalg.norm(w))
        assert all(b < a for a, b in zip(norms[10:], norms[11:]))

    def test_rejects_bad_grads(self):
        w = np.zeros(2)
        with pytest.raises(FloatingPointError):
            nncore.Adam().step([w], [np.array([np.nan, 0.0])])
        with pytest.raises(ValueError):
            nncore.Adam().step([w], [np.zeros(3)])


class TestDistributions:
    def test_reparam_closed_forms(self):
        m = np.array([[1.0, -1.0]])
        np.testing.assert_array_equal(nncore.gaussian_reparam(m, np.ones_like(m), np.zeros_like(m)), m)
        n = np.array([[0.3, 0.2]])
        np.testing.assert_allclose(nncore.gaussian_reparam(m, np.zeros_like(m), n), m + n)
        with pytest.raises(ValueError):
            nncore.gaussian_reparam(m, np.zeros((1, 3)), n)

    def test_logpdf_closed_forms(self):
        k = 4
        assert nncore.gaussian_logpdf(np.zeros(k), np.zeros(k), np.zeros(k)) == pytest.approx(-k / 2 * math.log(2 * math.pi))
        assert nncore.gaussian_logpdf(np.ones(1), np.zeros(1), np.zeros(1)) == pytest.approx(-1.4189385, abs=1e-7)

    def test_logpdf_matches_scalar_density(self):
        rng = np.random.default_rng(3)
        z, m, lv = rng.normal(size=5), rng.normal(size=5), rng.normal(size=5)
        expect = sum(math.log(math.exp(-(zi - mi) ** 2 / (2 * math.exp(v))) / math.sqrt(2 * math.pi * math.exp(v)))
                     for zi, mi, v in zip(z, m, lv))
        assert nncore.gaussian_logpdf(z, m, lv) == pytest.approx(expect, rel=1e-12)

    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=5), st.floats(-2, 2))
    @settings(max_examples=50, deadline=None)
    def test_logpdf_maximised_at_mean(self, mean, shift):
        m = np.array(mean)
        lv = np.zeros_like(m)
        assert nncore.gaussian_logpdf(m, m, lv) >= nncore.gaussian_logpdf(m + shift, m, lv)

    def test_bernoulli_closed_forms(self):
        assert nncore.bernoulli_logpmf([1, 0, 1], [0.5] * 3) == pytest.approx(3 * math.log(0.5))
        assert nncore.bernoulli_logpmf([1], [1.0]) == pytest.approx(math.log(1 - nncore.PROB_EPS))
        assert abs(nncore.bernoulli_logpmf([1], [1.0])) < 1e-5

    def test_bernoulli_matches_loop(self):
        rng = np.random.default_rng(4)
        a, p = rng.integers(0, 2, 6), rng.uniform(0.05, 0.95, 6)
        expect = sum(math.log(pi) if ai else math.log(1 - pi) for ai, pi in zip(a, p))
        assert nncore.bernoulli_logpmf(a, p) == pytest.approx(expect, rel=1e-12)

    @given(st.lists(st.tuples(st.integers(0, 1), st.floats(0, 1)), min_size=1, max_size=8))
    @settings(max_examples=80, deadline=None)
    def test_bernoulli_nonpositive(self, pairs):
        a, p = zip(*pairs)
        assert nncore.bernoulli_logpmf(a, p) <= 0

    def test_entropy_bounds(self):
        d = 5
        assert nncore.bernoulli_entropy(np.full(d, 0.5)) == pytest.approx(d * math.log(2))
        assert nncore.bernoulli_entropy(np.array([0.0, 1.0])) == pytest.approx(0.0, abs=1e-4)
        rng = np.random.default_rng(0)
        e = nncore.bernoulli_entropy(rng.random((100, d)))
        assert np.all(e >= 0) and np.all(e <= d * math.log(2))


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    mlp = nncore.Mlp.init((3, 4, 2), ("tanh", "sigmoid"), rng)
    nncore.save_checkpoint(tmp_path / "c.json", {"net": mlp}, lineage=["init:0"], extra={"note": 1})
    mods, doc = nncore.load_checkpoint(tmp_path / "c.json")
    x = rng.normal(size=(2, 3))
    np.testing.assert_array_equal(nncore.forward(mods["net"], x)[0], nncore.forward(mlp, x)[0])
    assert doc["lineage"] == ["init:0"] and doc["note"] == 1


def test_relative_error_definition():
    assert nncore.relative_error([1.0, 0.0], [1.0, 0.0]) == 0.0
    assert nncore.relative_error([1.0], [0.0]) == 1.0
    assert nncore.relative_error([0.0], [0.0]) == 0.0
