import math

import numpy as np
import pytest
from scipy.stats import norm

from clusterkernel import (
    ConfigError,
    DataError,
    GmmHyperParams,
    GmmParams,
    build_prior,
    e_step,
    fit_map_em,
    m_step,
    map_objective,
    masked_log_component,
)
from clusterkernel.dataset import MtsRecord
from clusterkernel.gmm import (
    LOG_DENSITY_FLOOR,
    component_log_likelihoods,
    init_params,
    moments_from_arrays,
)

HP = GmmHyperParams(a0=0.1, b0=0.1, n0=0.01)


def _random_params(rng, g, v, t):
    w = rng.random(g) + 0.1
    return GmmParams(weights=w / w.sum(),
                     means=rng.standard_normal((g, v, t)),
                     stds=rng.uniform(0.3, 2.0, (g, v)))


# ---------------------------------------------------------------------------
# prior construction


def test_build_prior_scalar_segment():
    pm = np.array([[0.7]])
    prior = build_prior(pm, np.array([2.0]), HP)
    assert prior.prior_cov.shape == (1, 1, 1)
    assert prior.prior_cov[0, 0, 0] == pytest.approx(2.0 * 0.1, rel=1e-6)


def test_build_prior_large_a0_is_diagonal():
    hp = GmmHyperParams(a0=1e3, b0=0.1, n0=0.01)
    prior = build_prior(np.zeros((1, 5)), np.ones(1), hp)
    off = prior.prior_cov[0] - np.diag(np.diag(prior.prior_cov[0]))
    assert np.abs(off).max() < 1e-12 * hp.b0


def test_build_prior_matches_formula():
    pm = np.zeros((1, 4))
    prior = build_prior(pm, np.ones(1), HP)
    idx = np.arange(4.0)
    want = 0.1 * np.exp(-0.1 * (idx[:, None] - idx[None, :]) ** 2)
    off_diag = ~np.eye(4, dtype=bool)
    assert np.abs(prior.prior_cov[0][off_diag] - want[off_diag]).max() < 1e-15
    # inverse is verified to reproduce the identity
    assert np.abs(prior.prior_cov[0] @ prior.prior_cov_inv[0] - np.eye(4)).max() < 1e-6


def test_hyperparams_must_be_positive():
    with pytest.raises(ConfigError):
        GmmHyperParams(a0=0.0, b0=0.1, n0=0.1)


# ---------------------------------------------------------------------------
# masked log density


def test_masked_log_component_empty_product():
    params = GmmParams(weights=np.array([1.0]), means=np.zeros((1, 2, 3)),
                       stds=np.ones((1, 2)))
    rec_vals = np.zeros((2, 3))
    assert masked_log_component(rec_vals, np.zeros((2, 3)), 0, params) == 0.0


def test_masked_log_component_gaussian_mode():
    params = GmmParams(weights=np.array([1.0]), means=np.zeros((1, 1, 1)),
                       stds=np.ones((1, 1)))
    mask = np.zeros((1, 1))
    mask[0, 0] = 1
    got = masked_log_component(np.zeros((1, 1)), mask, 0, params)
    assert got == pytest.approx(math.log(1.0 / math.sqrt(2 * math.pi)), abs=1e-12)


def test_masked_log_component_clamped_outlier():
    params = GmmParams(weights=np.array([1.0]), means=np.zeros((1, 1, 1)),
                       stds=np.ones((1, 1)))
    got = masked_log_component(np.array([[10.0]]), np.ones((1, 1)), 0, params)
    assert got == pytest.approx(LOG_DENSITY_FLOOR, abs=1e-12)
    assert got == pytest.approx(norm.logpdf(3.0), abs=1e-12)


def test_unmasked_equals_plain_gaussian_within_3_sigma(rng):
    g, v, t = 2, 2, 4
    params = _random_params(rng, g, v, t)
    # data within 3 sigma of every component mean so the clamp never binds
    x = params.means[0] + 0.5 * params.stds[0][:, None]
    ll = masked_log_component(x, np.ones((v, t)), 0, params)
    want = norm.logpdf(x, loc=params.means[0],
                       scale=params.stds[0][:, None]).sum()
    assert ll == pytest.approx(want, abs=1e-10)


# ---------------------------------------------------------------------------
# E-step


def test_e_step_single_component(rng):
    x = rng.standard_normal((5, 2, 3))
    r = np.ones_like(x)
    params = _random_params(rng, 1, 2, 3)
    post = e_step(x, r, params)
    assert np.allclose(post, 1.0)


def test_e_step_symmetric_components():
    params = GmmParams(weights=np.array([0.5, 0.5]),
                       means=np.stack([np.full((1, 2), -1.0), np.full((1, 2), 1.0)]),
                       stds=np.ones((2, 1)))
    x = np.zeros((1, 1, 2))  # equidistant from both means
    post = e_step(x, np.ones_like(x), params)
    assert np.allclose(post, 0.5)


def test_e_step_rows_normalized(rng):
    for _ in range(20):
        n, g, v, t = rng.integers(1, 6), rng.integers(1, 4), rng.integers(1, 3), rng.integers(1, 5)
        x = rng.standard_normal((n, v, t)) * 2
        r = (rng.random((n, v, t)) < 0.7).astype(float)
        post = e_step(x, r, _random_params(rng, g, v, t))
        assert np.abs(post.sum(axis=1) - 1.0).max() < 1e-9
        assert (post >= 0).all()


def test_e_step_shift_invariance(rng):
    # posteriors depend only on relative component log densities: scaling all
    # of one series' densities by a constant factor cancels in the softmax
    g, v, t = 3, 2, 3
    params = _random_params(rng, g, v, t)
    x = rng.standard_normal((4, v, t))
    r = np.ones_like(x)
    ll = component_log_likelihoods(x, r, params)
    logw = np.log(params.weights)
    shifted = ll.copy()
    shifted[2] += 7.3
    def softmax_rows(a):
        a = a - a.max(axis=1, keepdims=True)
        e = np.exp(a)
        return e / e.sum(axis=1, keepdims=True)
    assert np.allclose(softmax_rows(logw + ll), softmax_rows(logw + shifted), atol=1e-12)


# ---------------------------------------------------------------------------
# M-step


def test_m_step_vanishing_prior_recovers_sample_moments(rng):
    n, v, t = 50, 1, 3
    x = rng.standard_normal((n, v, t)) * 1.7 + 0.4
    r = np.ones_like(x)
    pm, sv = moments_from_arrays(x, r)
    hp = GmmHyperParams(a0=0.1, b0=1e8, n0=1e-12)  # flat mean prior, no shrinkage
    prior = build_prior(pm, sv, hp)
    post = np.ones((n, 1))
    params = GmmParams(weights=np.array([1.0]), means=pm[None], stds=sv[None])
    new = m_step(x, r, post, prior, hp, params)
    assert np.allclose(new.means[0], x.mean(axis=0), atol=1e-5)
    want_var = ((x - x.mean(axis=0)) ** 2).mean()
    assert new.stds[0, 0] == pytest.approx(math.sqrt(want_var), abs=1e-5)


def test_m_step_zero_responsibility_shrinks_to_dataset_moments(rng):
    n, v, t = 10, 2, 4
    x = rng.standard_normal((n, v, t))
    r = np.ones_like(x)
    pm, sv = moments_from_arrays(x, r)
    hp = GmmHyperParams(a0=0.1, b0=0.1, n0=0.1)
    prior = build_prior(pm, sv, hp)
    post = np.zeros((n, 2))
    post[:, 0] = 1.0  # component 1 gets nothing
    params = GmmParams(weights=np.array([0.5, 0.5]),
                       means=np.tile(pm, (2, 1, 1)), stds=np.tile(sv, (2, 1)))
    new = m_step(x, r, post, prior, hp, params)
    assert np.allclose(new.means[1], pm, atol=1e-10)
    assert np.allclose(new.stds[1], sv, atol=1e-10)


def test_m_step_dense_oracle_small():
    # 2 series, 1 attribute, T=2, hand-set posteriors
    x = np.array([[[1.0, 2.0]], [[3.0, 0.0]]])
    r = np.ones_like(x)
    post = np.array([[0.3], [0.9]])
    pm, sv = moments_from_arrays(x, r)
    hp = GmmHyperParams(a0=0.5, b0=0.2, n0=0.05)
    prior = build_prior(pm, sv, hp)
    params = GmmParams(weights=np.array([1.0]), means=pm[None], stds=sv[None])
    new = m_step(x, r, post, prior, hp, params)
    s_inv = prior.prior_cov_inv[0]
    a = s_inv + np.diag(post[:, 0].sum() * np.ones(2)) / sv[0] ** 2
    b = s_inv @ pm[0] + (post[:, 0][:, None] * x[:, 0, :]).sum(axis=0) / sv[0] ** 2
    mu = np.linalg.solve(a, b)
    assert np.abs(new.means[0, 0] - mu).max() < 1e-10
    num = hp.n0 * sv[0] ** 2 + (post[:, 0][:, None] * (x[:, 0, :] - mu) ** 2).sum()
    den = hp.n0 + post[:, 0].sum() * 2
    assert new.stds[0, 0] == pytest.approx(math.sqrt(num / den), abs=1e-10)
    assert new.weights[0] == pytest.approx(post.mean(), abs=1e-12)


def test_m_step_series_permutation_invariant(rng):
    n, g, v, t = 7, 3, 2, 5
    x = rng.standard_normal((n, v, t))
    r = (rng.random((n, v, t)) < 0.8).astype(float)
    post = rng.random((n, g))
    post /= post.sum(axis=1, keepdims=True)
    pm, sv = moments_from_arrays(x, r)
    prior = build_prior(pm, sv, HP)
    params = _random_params(rng, g, v, t)
    perm = rng.permutation(n)
    a = m_step(x, r, post, prior, HP, params)
    b = m_step(x[perm], r[perm], post[perm], prior, HP, params)
    assert np.allclose(a.means, b.means, atol=1e-10)
    assert np.allclose(a.stds, b.stds, atol=1e-10)
    assert np.allclose(a.weights, b.weights, atol=1e-12)


# ---------------------------------------------------------------------------
# full fits


def test_fit_single_component_fast_convergence(rng):
    x = rng.standard_normal((10, 1, 4))
    r = np.ones_like(x)
    params, post = fit_map_em(x, r, 1, HP, seed=0)
    assert np.allclose(post, 1.0)
    assert params.weights[0] == pytest.approx(1.0)


def test_fit_recovers_separated_blobs(rng):
    a = rng.standard_normal((10, 1, 5)) * 0.3 + 5.0
    b = rng.standard_normal((10, 1, 5)) * 0.3 - 5.0
    x = np.concatenate([a, b])
    r = np.ones_like(x)
    params, post = fit_map_em(x, r, 2, HP, seed=3)
    hard = post.argmax(axis=1)
    assert len(set(hard[:10])) == 1
    assert len(set(hard[10:])) == 1
    assert hard[0] != hard[10]


def test_fit_deterministic(rng):
    x = rng.standard_normal((8, 2, 6))
    r = (rng.random(x.shape) < 0.8).astype(float)
    p1, q1 = fit_map_em(x, r, 3, HP, seed=42)
    p2, q2 = fit_map_em(x, r, 3, HP, seed=42)
    assert np.array_equal(p1.means, p2.means)
    assert np.array_equal(p1.stds, p2.stds)
    assert np.array_equal(q1, q2)


def test_fit_rejects_bad_inputs(rng):
    x = rng.standard_normal((4, 1, 3))
    r = np.ones_like(x)
    with pytest.raises(ConfigError):
        fit_map_em(x, r, 0, HP, seed=0)
    with pytest.raises(DataError):
        fit_map_em(x[:0], r[:0], 2, HP, seed=0)


def test_init_params_prior_consistent(rng):
    pm, sv = np.zeros((2, 6)), np.array([1.0, 2.0])
    prior = build_prior(pm, sv, HP)
    params = init_params(prior, 4, np.random.default_rng(0))
    assert params.weights.shape == (4,)
    assert np.allclose(params.weights, 0.25)
    assert np.array_equal(params.stds, np.tile(sv, (4, 1)))


def test_map_objective_monotone_during_unclamped_em(rng):
    # block-coordinate MAP ascent: the objective must never decrease when the
    # E-step and the objective use the same (unclamped) likelihood
    for trial in range(5):
        n, g, v, t = 12, 2, 2, 5
        x = rng.standard_normal((n, v, t))
        r = np.ones_like(x)
        pm, sv = moments_from_arrays(x, r)
        prior = build_prior(pm, sv, HP)
        params = init_params(prior, g, np.random.default_rng(trial))

        def posterior(p):
            ll = component_log_likelihoods(x, r, p, clamp=False)
            lp = np.log(p.weights)[None, :] + ll
            lp -= lp.max(axis=1, keepdims=True)
            e = np.exp(lp)
            return e / e.sum(axis=1, keepdims=True)

        prev = map_objective(x, r, params, prior, HP, clamp=False)
        post = posterior(params)
        for _ in range(15):
            params = m_step(x, r, post, prior, HP, params)
            cur = map_objective(x, r, params, prior, HP, clamp=False)
            assert cur >= prev - 1e-8
            prev = cur
            post = posterior(params)
