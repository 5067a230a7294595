"""Diagonal-covariance Gaussian mixture for masked MTS, fitted by MAP-EM.

Each mixture component has a time-dependent mean curve per attribute and a
time-constant per-attribute standard deviation. Missing cells are integrated
out of the likelihood: a cell contributes only where its mask is 1. Two
empirical priors regularize the fit: a squared-exponential Gaussian process
prior on each mean curve (smoothness) and an inverse-Gamma-style prior that
shrinks variances toward the pooled data variance.

All fitting routines work on stacked arrays ``x`` (N, V, T) and masks ``r``
of the same shape, with missing cells zeroed; see ``dataset.Dataset.to_arrays``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .errors import ConfigError, DataError, NumericError

_SIGMA_FLOOR = 1e-6
_LOG_2PI = math.log(2.0 * math.pi)

# Lower bound on a single cell's log density: the standard normal log density
# three standard deviations out. Keeps outlier posteriors finite.
LOG_DENSITY_FLOOR = -0.5 * _LOG_2PI - 4.5


@dataclass(frozen=True)
class GmmHyperParams:
    """Prior hyperparameters: mean smoothness (a0), prior amplitude (b0),
    variance-shrinkage pseudo-count (n0)."""

    a0: float
    b0: float
    n0: float

    def __post_init__(self):
        if not (self.a0 > 0 and self.b0 > 0 and self.n0 > 0):
            raise ConfigError(f"hyperparameters must be strictly positive, got {self}")


@dataclass
class MeanPrior:
    """Gaussian prior over component mean curves on a time segment.

    ``prior_cov[v] = stds[v] * b0 * exp(-a0 (t - t')^2)`` plus the diagonal
    jitter needed to invert it.
    """

    prior_means: np.ndarray    # (V, L)
    prior_cov: np.ndarray      # (V, L, L), jittered
    prior_cov_inv: np.ndarray  # (V, L, L)
    chol: np.ndarray           # (V, L, L) lower Cholesky factors of prior_cov
    attr_stds: np.ndarray      # (V,) pooled stds s_v
    logdet: np.ndarray         # (V,) log det prior_cov


@dataclass
class GmmParams:
    """Mixture weights, mean curves and per-attribute stds for G components."""

    weights: np.ndarray  # (G,)
    means: np.ndarray    # (G, V, L)
    stds: np.ndarray     # (G, V)

    @property
    def n_components(self) -> int:
        return len(self.weights)


def moments_from_arrays(x: np.ndarray, r: np.ndarray):
    """Observed-cell means per (v, t) and pooled per-attribute stds.

    Raises DataError when some (v, t) has no observation at all.
    """
    obs = r.astype(bool)
    counts = obs.sum(axis=0)
    if (counts == 0).any():
        v_i, t_i = np.argwhere(counts == 0)[0]
        raise DataError(f"no observed value at attribute {v_i}, time index {t_i}")
    means = np.where(obs, x, 0.0).sum(axis=0) / counts
    n_v = x.shape[1]
    stds = np.empty(n_v)
    for v in range(n_v):
        stds[v] = x[:, v, :][obs[:, v, :]].std()
    return means, np.maximum(stds, _SIGMA_FLOOR)


def build_prior(prior_means: np.ndarray, attr_stds: np.ndarray,
                hp: GmmHyperParams) -> MeanPrior:
    """Build the smoothness prior for mean curves on a segment of given length.

    The jitter added to keep the covariance invertible starts at
    1e-8 * s_v * b0 and escalates tenfold up to 1e-2 * s_v * b0 before
    giving up.
    """
    n_v, seg_len = prior_means.shape
    idx = np.arange(seg_len, dtype=np.float64)
    dt2 = (idx[:, None] - idx[None, :]) ** 2
    kmat = hp.b0 * np.exp(-hp.a0 * dt2)

    cov = np.empty((n_v, seg_len, seg_len))
    inv = np.empty_like(cov)
    chol = np.empty_like(cov)
    logdet = np.empty(n_v)
    eye = np.eye(seg_len)
    for v in range(n_v):
        base = attr_stds[v] * kmat
        factor = 1e-8
        while True:
            cand = base + factor * attr_stds[v] * hp.b0 * eye
            try:
                c, low = cho_factor(cand, lower=True)
                cand_inv = cho_solve((c, low), eye)
            except np.linalg.LinAlgError:
                cand_inv = None
            if cand_inv is not None and np.abs(cand @ cand_inv - eye).max() <= 1e-6:
                cov[v] = cand
                inv[v] = 0.5 * (cand_inv + cand_inv.T)
                chol[v] = np.tril(c)
                logdet[v] = 2.0 * np.log(np.diag(c)).sum()
                break
            factor *= 10.0
            if factor > 1e-2:
                raise NumericError(
                    f"mean prior covariance not invertible for a0={hp.a0}, b0={hp.b0}")
    return MeanPrior(prior_means=prior_means, prior_cov=cov, prior_cov_inv=inv,
                     chol=chol, attr_stds=attr_stds, logdet=logdet)


def component_log_likelihoods(x: np.ndarray, r: np.ndarray, params: GmmParams,
                              clamp: bool = True) -> np.ndarray:
    """Masked log density of every series under every component, shape (N, G).

    Per-cell log densities are floored at LOG_DENSITY_FLOOR when ``clamp`` is
    on; a fully missing series scores 0 (empty product).
    """
    n, n_v, seg_len = x.shape
    g = params.n_components
    r = np.asarray(r, dtype=np.float64)
    const = -np.log(params.stds) - 0.5 * _LOG_2PI  # (G, V) per-cell peak log density
    z2 = x[:, None, :, :] - params.means[None]
    z2 /= params.stds[None, :, :, None]
    z2 *= z2
    if clamp:
        # flooring the log density at F is capping z^2 at 2*(const - F)
        np.minimum(z2, 2.0 * (const - LOG_DENSITY_FLOOR)[None, :, :, None], out=z2)
    quad = np.matmul(z2.reshape(n, g, n_v * seg_len),
                     r.reshape(n, n_v * seg_len, 1))[:, :, 0]
    return r.sum(axis=2) @ const.T - 0.5 * quad


def masked_log_component(values: np.ndarray, mask: np.ndarray, g: int,
                         params: GmmParams) -> float:
    """Masked log density of one restricted series under component ``g``."""
    ll = component_log_likelihoods(values[None], mask[None].astype(np.float64), params)
    return float(ll[0, g])


def e_step(x: np.ndarray, r: np.ndarray, params: GmmParams) -> np.ndarray:
    """Responsibilities (N, G): rows normalize theta_g * exp(log-likelihood)."""
    ll = component_log_likelihoods(x, r, params)
    logpost = np.log(params.weights)[None, :] + ll
    logpost -= logpost.max(axis=1, keepdims=True)
    np.exp(logpost, out=logpost)
    logpost /= logpost.sum(axis=1, keepdims=True)
    return logpost


def m_step(x: np.ndarray, r: np.ndarray, post: np.ndarray, prior: MeanPrior,
           hp: GmmHyperParams, params: GmmParams) -> GmmParams:
    """Closed-form MAP updates of weights, means and stds.

    Means are updated first using the previous stds, then stds using the new
    means; each step is exact given the other block.
    """
    n, n_v, seg_len = x.shape
    g = post.shape[1]
    theta = post.sum(axis=0) / n

    rf = r.astype(np.float64) if r.dtype != np.float64 else r
    xr = x * rf
    x2r = x * xr
    inv_var = 1.0 / (params.stds ** 2)  # previous stds, (G, V)

    mu = np.empty((g, n_v, seg_len))
    num = np.empty((g, n_v))
    den = np.empty((g, n_v))
    diag_idx = np.arange(seg_len)
    for v in range(n_v):
        s_inv = prior.prior_cov_inv[v]
        counts = post.T @ rf[:, v, :]            # (G, L): sum_n pi_g r
        wsum = post.T @ xr[:, v, :]              # (G, L): sum_n pi_g r x
        sqsum = post.T @ x2r[:, v, :]            # (G, L): sum_n pi_g r x^2
        a = np.broadcast_to(s_inv, (g, seg_len, seg_len)).copy()
        a[:, diag_idx, diag_idx] += inv_var[:, v, None] * counts
        b = (s_inv @ prior.prior_means[v])[None, :] + inv_var[:, v, None] * wsum
        try:
            mu_v = np.linalg.solve(a, b[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"mean update solve failed for attribute {v}: {exc}") from None
        mu[:, v, :] = mu_v
        # sum_{n,t} pi r (x - mu)^2 expanded in the sufficient statistics above
        num[:, v] = (sqsum - 2.0 * mu_v * wsum + mu_v ** 2 * counts).sum(axis=1)
        den[:, v] = counts.sum(axis=1)
    var = (hp.n0 * prior.attr_stds[None, :] ** 2 + num) / (hp.n0 + den)
    stds = np.maximum(np.sqrt(var), _SIGMA_FLOOR)

    return GmmParams(weights=theta, means=mu, stds=stds)


def init_params(prior: MeanPrior, g_components: int, rng: np.random.Generator) -> GmmParams:
    """Seeded initialization: uniform weights, prior-sampled mean curves,
    pooled stds."""
    n_v, seg_len = prior.prior_means.shape
    z = rng.standard_normal((g_components, n_v, seg_len))
    means = prior.prior_means[None] + np.einsum("vij,gvj->gvi", prior.chol, z)
    weights = np.full(g_components, 1.0 / g_components)
    stds = np.tile(prior.attr_stds, (g_components, 1))
    return GmmParams(weights=weights, means=means, stds=stds)


def fit_map_em(x: np.ndarray, r: np.ndarray, g_components: int, hp: GmmHyperParams,
               seed, max_iter: int = 20, tol: float = 1e-3):
    """Fit the mixture by alternating E and M steps from a seeded start.

    Stops when the largest absolute responsibility change between successive
    E-steps falls below ``tol`` or after ``max_iter`` iterations. Returns the
    final parameters and responsibilities (N, G). ``seed`` may be an int or a
    ``numpy.random.Generator``.
    """
    if g_components < 1:
        raise ConfigError(f"need at least one component, got {g_components}")
    if x.shape[0] == 0:
        raise DataError("cannot fit on an empty dataset")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    prior_means, attr_stds = moments_from_arrays(x, r)
    prior = build_prior(prior_means, attr_stds, hp)
    params = init_params(prior, g_components, rng)

    rf = np.asarray(r, dtype=np.float64)
    prev_post = None
    post = e_step(x, rf, params)
    for _ in range(max_iter):
        if prev_post is not None and np.abs(post - prev_post).max() < tol:
            break
        params = m_step(x, rf, post, prior, hp, params)
        prev_post = post
        post = e_step(x, rf, params)
    return params, post


def map_objective(x: np.ndarray, r: np.ndarray, params: GmmParams, prior: MeanPrior,
                  hp: GmmHyperParams, clamp: bool = True) -> float:
    """Marginal log-likelihood plus mean/std prior log densities.

    The quantity MAP-EM ascends; used to verify monotonicity across
    iterations.
    """
    ll = component_log_likelihoods(x, r, params, clamp=clamp)
    data_term = logsumexp(np.log(params.weights)[None, :] + ll, axis=1).sum()

    g, n_v, seg_len = params.means.shape
    mean_term = 0.0
    for v in range(n_v):
        d = params.means[:, v, :] - prior.prior_means[v][None, :]
        quad = np.einsum("gi,ij,gj->g", d, prior.prior_cov_inv[v], d)
        mean_term += (-0.5 * quad - 0.5 * prior.logdet[v] - 0.5 * seg_len * _LOG_2PI).sum()

    s2 = prior.attr_stds[None, :] ** 2
    std_term = (-hp.n0 * np.log(params.stds) - hp.n0 * s2 / (2.0 * params.stds ** 2)).sum()
    return float(data_term + mean_term + std_term)
