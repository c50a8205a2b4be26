"""Predictive class probabilities for test inputs.

Two integration styles:

* Gaussian-approximation prediction: the latent posterior q(f | y, theta)
  is integrated analytically, giving a Gaussian for the test latent and a
  closed-form probit convolution for the class probability.
* Monte Carlo prediction: averaging the conditional-prior probit
  convolution over posterior samples (f, theta), each sample reusing one
  kernel factorization.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtr

from .kernels import build_kernel, cross_kernel, cross_kernel_matrix


@dataclass
class ClampCounter:
    """Counts predictive variances nudged up to zero by round-off."""

    clamped: int = 0


def latent_predictive_gaussian(x_star, X, km, q, hyper, kind, clamp_counter=None):
    """Mean and variance of the test latent under a Gaussian posterior.

        m*  = k.T K^-1 mu_q
        s2* = k** - k.T K^-1 k + k.T K^-1 Sigma_q K^-1 k

    evaluated through triangular solves against the stored factors.  A
    slightly negative s2* from round-off is clamped at zero (and counted
    when a counter is given).
    """
    k_star = cross_kernel(X, x_star, hyper, kind)
    k_ss = hyper.sigma
    alpha = km.solve(k_star)
    m_star = float(np.dot(alpha, q.mean))
    w = q.cov_chol.T @ alpha
    s2_star = float(k_ss - np.dot(k_star, alpha) + np.dot(w, w))
    if s2_star < 0.0:
        if clamp_counter is not None:
            clamp_counter.clamped += 1
        s2_star = 0.0
    return m_star, s2_star


def probit_predictive(m_star, s2_star):
    """Positive-class probability Phi(m* / sqrt(1 + s2*)).

    The convolution of the probit link with a Gaussian latent is exactly
    this rescaled normal CDF.
    """
    if s2_star < 0:
        raise ValueError("predictive variance must be non-negative")
    return float(ndtr(m_star / np.sqrt(1.0 + s2_star)))


def latent_conditional_moments(x_star, X, km, hyper, kind, f, clamp_counter=None):
    """Conditional-prior moments of the test latent given sampled f.

        mu*    = k.T K^-1 f
        beta2* = k** - k.T K^-1 k
    """
    k_star = cross_kernel(X, x_star, hyper, kind)
    alpha = km.solve(k_star)
    mu_star = float(np.dot(alpha, f))
    beta2 = float(hyper.sigma - np.dot(k_star, alpha))
    if beta2 < 0.0:
        if clamp_counter is not None:
            clamp_counter.clamped += 1
        beta2 = 0.0
    return mu_star, beta2


def mc_predictive(samples, X, x_star, kind, factor_cache=None, clamp_counter=None):
    """Average predictive probability over posterior samples.

    ``samples`` is a sequence of (hyper, f) pairs.  Factors are cached by
    sample index so a batch of test points pays one factorization per
    sample; pass a shared dict as ``factor_cache`` to reuse them across
    calls.
    """
    samples = list(samples)
    if len(samples) == 0:
        raise ValueError("at least one posterior sample is required")
    if factor_cache is None:
        factor_cache = {}
    total = 0.0
    for idx, (hyper, f) in enumerate(samples):
        km = factor_cache.get(idx)
        if km is None:
            km = build_kernel(X, hyper, kind)
            factor_cache[idx] = km
        mu_star, beta2 = latent_conditional_moments(
            x_star, X, km, hyper, kind, f, clamp_counter=clamp_counter
        )
        total += probit_predictive(mu_star, beta2)
    return total / len(samples)


def mc_predictive_batch(samples, X, X_star, kind, clamp_counter=None):
    """Monte Carlo predictions for a batch of test points.

    One factorization and one batched triangular solve per sample cover
    every test point, so the cost is O(n^3 + n^2 p) per posterior sample.
    """
    samples = list(samples)
    if len(samples) == 0:
        raise ValueError("at least one posterior sample is required")
    X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
    total = np.zeros(X_star.shape[0])
    for hyper, f in samples:
        km = build_kernel(X, hyper, kind)
        k_star = cross_kernel_matrix(X, X_star, hyper, kind)
        v = solve_triangular(km.chol, k_star, lower=True, check_finite=False)
        mu_star = v.T @ km.half_solve(f)
        beta2 = hyper.sigma - np.einsum("ij,ij->j", v, v)
        low = beta2 < 0.0
        if np.any(low):
            if clamp_counter is not None:
                clamp_counter.clamped += int(np.sum(low))
            beta2 = np.where(low, 0.0, beta2)
        total += ndtr(mu_star / np.sqrt(1.0 + beta2))
    return total / len(samples)


def gaussian_predictive_batch(X_star, X, km, q, hyper, kind, clamp_counter=None):
    """Gaussian-approximation predictions for a batch of test points."""
    X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
    out = np.empty(X_star.shape[0])
    for i, x in enumerate(X_star):
        m, s2 = latent_predictive_gaussian(
            x, X, km, q, hyper, kind, clamp_counter=clamp_counter
        )
        out[i] = probit_predictive(m, s2)
    return out
