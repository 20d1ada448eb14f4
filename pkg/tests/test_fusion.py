from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ngramres import fusion as F

logit_vectors = hnp.arrays(np.float64, st.integers(2, 40), elements=st.floats(-20, 20))


def _dist(rng, V):
    q = rng.dirichlet(np.full(V, 0.3))
    return np.maximum(q, F.DEFAULT_FLOOR)


@pytest.mark.parametrize(
    "step,expected", [(0, 0.3), (1000, 0.15), (2000, 0.0), (5000, 0.0), (500, 0.3 * 0.75)]
)
def test_linear_anneal_values(step, expected):
    cfg = F.FusionConfig(alpha0=0.3, schedule="linear_anneal", anneal_steps=2000)
    assert F.alpha_at_step(cfg, step) == pytest.approx(expected, abs=1e-15)


def test_constant_schedule():
    cfg = F.FusionConfig(alpha0=0.5)
    assert {F.alpha_at_step(cfg, s) for s in (0, 10, 10**6)} == {0.5}


def test_negative_step_rejected():
    with pytest.raises(F.FusionError):
        F.alpha_at_step(F.FusionConfig(), -1)


@pytest.mark.parametrize(
    "kwargs",
    [dict(alpha0=-0.1), dict(schedule="cosine"), dict(prob_floor=0.0), dict(prob_floor=0.1), dict(interp_lambda=1.5)],
)
def test_config_validation(kwargs):
    with pytest.raises(F.FusionError):
        F.FusionConfig(**kwargs).validate()


def test_inverse_softmax_recovers_distribution():
    rng = np.random.default_rng(0)
    q = _dist(rng, 12)
    q /= q.sum()
    back = np.exp(F.fused_distribution(np.zeros(12), F.inverse_softmax(q, 0.0), 1.0))
    np.testing.assert_allclose(back, q, rtol=1e-12)


def test_floor_keeps_zero_probabilities_finite():
    lp = F.inverse_softmax(np.array([0.0, 1.0]), floor=1e-10)
    assert lp[0] == pytest.approx(np.log(1e-10))


@given(logit_vectors)
def test_alpha_zero_is_neural_distribution(z):
    q = np.log(np.full(len(z), 1.0 / len(z)))
    np.testing.assert_array_equal(F.fuse_logits(z, q, 0.0), z)
    np.testing.assert_allclose(np.exp(F.fused_distribution(z, q, 0.0)), F.neural_distribution(z), atol=1e-15)


@given(logit_vectors, st.floats(0.0, 3.0))
@settings(max_examples=200)
def test_uniform_ngram_leaves_neural_unchanged(z, alpha):
    V = len(z)
    q = F.inverse_softmax(np.full(V, 1.0 / V))
    fused = np.exp(F.fused_distribution(z, q, alpha))
    neural = F.neural_distribution(z)
    np.testing.assert_allclose(fused, neural, atol=1e-12)
    assert np.argmax(fused) == np.argmax(neural)


def test_logit_and_reweighted_forms_agree_on_1000_cases():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        V = int(rng.integers(2, 60))
        z = rng.normal(scale=3.0, size=V)
        q = _dist(rng, V)
        alpha = float(rng.choice([0.0, rng.uniform(0, 2)]))
        c = float(rng.normal(scale=10))
        a = np.exp(F.fused_distribution(z, np.log(q), alpha, c))
        b = F.reweight_form(z, q, alpha, c)
        worst = max(worst, np.abs(a - b).max())
    assert worst <= 1e-9


@given(logit_vectors, st.floats(0.0, 2.0), st.floats(-100, 100), st.integers(0, 2**31))
@settings(max_examples=200)
def test_constant_invariance(z, alpha, c, seed):
    q = _dist(np.random.default_rng(seed), len(z))
    base = F.fused_distribution(z, np.log(q), alpha, 0.0)
    shifted = F.fused_distribution(z, np.log(q), alpha, c)
    np.testing.assert_allclose(np.exp(shifted), np.exp(base), atol=1e-12)
    np.testing.assert_array_equal(F.reweight_form(z, q, alpha, c), F.reweight_form(z, q, alpha, 0.0))


def test_reweight_needs_positive_q():
    with pytest.raises(F.FusionError):
        F.reweight_form(np.zeros(3), np.array([0.5, 0.5, 0.0]), 0.3)


def test_shape_mismatch():
    with pytest.raises(F.FusionError):
        F.fuse_logits(np.zeros(3), np.zeros(4), 0.3)


@given(st.floats(0.0, 1.0), st.integers(0, 2**31))
def test_prob_interpolation_is_a_distribution(lam, seed):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(7)), rng.dirichlet(np.ones(7))
    mix = F.prob_interpolate(q, p, lam)
    assert mix.sum() == pytest.approx(1.0)
    assert np.all(mix >= np.minimum(p, q) - 1e-15)


def test_prob_interpolation_endpoints():
    p, q = np.array([0.2, 0.8]), np.array([0.6, 0.4])
    np.testing.assert_array_equal(F.prob_interpolate(q, p, 0.0), p)
    np.testing.assert_array_equal(F.prob_interpolate(q, p, 1.0), q)


def test_fusion_sharpens_toward_confident_ngram():
    z = np.zeros(4)
    q = np.array([0.97, 0.01, 0.01, 0.01])
    p = np.exp(F.fused_distribution(z, np.log(q), 0.5))
    assert p[0] > 0.25 and np.argmax(p) == 0
