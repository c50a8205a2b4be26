"""Gaussian approximations to the latent posterior.

Both algorithms approximate p(f | y, theta) by N(mean, Sigma) and report
an approximate log marginal likelihood:

* Laplace: Newton iteration to the posterior mode, curvature from the
  negative Hessian.  One n-by-n factorization per Newton step.
* Expectation propagation: per-site Gaussian likelihood terms refined by
  cavity/moment-matching sweeps, with a full posterior recomputation at
  the end of every sweep for numerical stability.

The iteration exit test in both cases is the squared norm of the change
in the (posterior mean) vector dropping below n / 1e4; Laplace further
polishes until the target gradient is numerically zero, which the
quadratic convergence of Newton's method delivers in one or two extra
steps.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.linalg.blas import dger
from scipy.special import log_ndtr

from .kernels import chol_with_jitter
from .likelihoods import (
    _LOG_SQRT_2PI,
    inv_mills_ratio,
    log_likelihood,
    loglik_grad,
    loglik_neg_hess_diag,
)

LAPLACE = "la"
EP = "ep"
METHODS = (LAPLACE, EP)

LAPLACE_MAX_ITER = 100
EP_MAX_SWEEPS = 200
GRAD_TOL = 1e-6


class ConvergenceError(Exception):
    """Approximation failed to converge within its iteration cap."""

    def __init__(self, message, last_change):
        super().__init__(message)
        self.last_change = last_change


@dataclass(frozen=True)
class GaussianApprox:
    """N(mean, Sigma) over the latent vector.

    The covariance (K^-1 + S^-1)^-1 of both approximations is carried in
    the factored form Sigma = L (I + L^T S^-1 L)^-1 L^T, with L the prior
    factor and G = chol(I + L^T S^-1 L) the ``inner_chol``.  Keeping the
    prior factor explicit matters: near-singular kernels make an explicit
    Cholesky of Sigma lose the alignment between the null spaces of prior
    and posterior, which poisons importance weights.  A direct factor C
    with C C^T = Sigma can be supplied instead for synthetic/test
    distributions (``cov_factor``).
    """

    mean: np.ndarray
    log_approx_marginal: float
    method: str
    iterations_used: int
    kernel_chol: np.ndarray = None
    inner_chol: np.ndarray = None
    cov_factor: np.ndarray = None

    def __post_init__(self):
        if self.cov_factor is None and (
            self.kernel_chol is None or self.inner_chol is None
        ):
            raise ValueError("need either (kernel_chol, inner_chol) or cov_factor")
        if self.kernel_chol is not None:
            half_mean = solve_triangular(
                self.kernel_chol, self.mean, lower=True, check_finite=False
            )
            object.__setattr__(self, "half_mean", half_mean)
            log_det = 2.0 * float(
                np.sum(np.log(np.diag(self.kernel_chol)))
            ) - 2.0 * float(np.sum(np.log(np.diag(self.inner_chol))))
        else:
            object.__setattr__(self, "half_mean", None)
            log_det = 2.0 * float(np.sum(np.log(np.abs(np.diag(self.cov_factor)))))
        object.__setattr__(self, "log_det_cov", log_det)

    @property
    def n(self):
        return self.mean.shape[0]

    def log_density(self, f):
        """Log density of N(f | mean, Sigma)."""
        if self.kernel_chol is not None:
            u = solve_triangular(
                self.kernel_chol, f - self.mean, lower=True, check_finite=False
            )
            z = self.inner_chol.T @ u
        else:
            z = np.linalg.solve(self.cov_factor, f - self.mean)
        return float(
            -0.5 * np.dot(z, z) - 0.5 * self.log_det_cov - self.n * _LOG_SQRT_2PI
        )

    def whiten_noise(self, nu):
        """Map standard-normal noise to draws: mean + L G^-T nu (rows)."""
        if self.kernel_chol is not None:
            half = solve_triangular(
                self.inner_chol, nu.T, lower=True, trans="T", check_finite=False
            )
            return self.mean[None, :] + (self.kernel_chol @ half).T
        return self.mean[None, :] + nu @ self.cov_factor.T

    def sample(self, rng, size=None):
        """Draws from the approximation; shape (n,) or (size, n)."""
        nu = rng.standard_normal((size if size is not None else 1, self.n))
        out = self.whiten_noise(nu)
        return out[0] if size is None else out

    def cov_trans(self, alpha):
        """C^T alpha for a factor C with C C^T = Sigma."""
        if self.kernel_chol is not None:
            return solve_triangular(
                self.inner_chol, self.kernel_chol.T @ alpha, lower=True,
                check_finite=False,
            )
        return self.cov_factor.T @ alpha

    def covariance(self):
        """Dense Sigma (diagnostics and small-problem tests)."""
        if self.kernel_chol is not None:
            c = solve_triangular(
                self.inner_chol, self.kernel_chol.T, lower=True,
                check_finite=False,
            )
            return c.T @ c
        return self.cov_factor @ self.cov_factor.T


@dataclass(frozen=True)
class EPSites:
    """Converged per-site Gaussian likelihood terms.

    z_tilde holds the site log normalizers; mu_tilde / sigma2_tilde the
    site means and variances.
    """

    z_tilde: np.ndarray
    mu_tilde: np.ndarray
    sigma2_tilde: np.ndarray


_LOG_SQRT_2PI_F = float(_LOG_SQRT_2PI)


def probit_tilted_moments(cavity_mean, cavity_var, y):
    """Moments of Phi(y f) N(f | cavity_mean, cavity_var).

    Returns (log Z, mean, var) of the tilted density.  The variance is
    strictly smaller than the cavity variance because the probit factor
    is log-concave.  Scalar math throughout: this sits in the EP inner
    loop.
    """
    if cavity_var <= 0:
        raise ValueError("cavity variance must be positive")
    denom = math.sqrt(1.0 + cavity_var)
    z = y * cavity_mean / denom
    log_z = float(log_ndtr(z))
    r = math.exp(-0.5 * z * z - _LOG_SQRT_2PI_F - log_z)
    mean = cavity_mean + y * cavity_var * r / denom
    var = cavity_var - cavity_var * cavity_var * r * (z + r) / (1.0 + cavity_var)
    return log_z, mean, var


def _posterior_from_w(K, W, ops=None):
    """Sigma = (K^-1 + W)^-1 for diagonal W >= 0, plus log|I + W^.5 K W^.5|.

    Returns (Sigma, chol of B, sqrt W, half log det B).
    """
    n = K.shape[0]
    sw = np.sqrt(W)
    B = np.eye(n) + sw[:, None] * K * sw[None, :]
    LB = cholesky(B, lower=True, check_finite=False)
    if ops is not None:
        ops.add_factorization()
    V = solve_triangular(LB, sw[:, None] * K, lower=True, check_finite=False)
    if ops is not None:
        ops.add_matrix_solve()
    Sigma = K - V.T @ V
    if ops is not None:
        ops.add_matrix_product()
    half_log_det_B = float(np.sum(np.log(np.diag(LB))))
    return Sigma, LB, sw, half_log_det_B


def _inner_chol(L, precisions, ops=None):
    """G = chol(I + L^T diag(precisions) L), the inner posterior factor."""
    n = L.shape[0]
    inner = np.eye(n) + (L.T * precisions[None, :]) @ L
    if ops is not None:
        ops.add_matrix_product()
    G = cholesky(inner, lower=True, check_finite=False)
    if ops is not None:
        ops.add_factorization()
    return G


def laplace_approx(y, km, max_iter=LAPLACE_MAX_ITER, grad_tol=GRAD_TOL, ops=None):
    """Laplace approximation of the latent posterior.

    Parameters
    ----------
    y : array of -1/+1 labels
    km : KernelMatrix over the matching inputs
    ops : optional OpCounter accumulating cubic operations

    Returns
    -------
    GaussianApprox
    """
    y = np.asarray(y, dtype=float)
    K = km.matrix
    n = km.n
    tol_sq = n / 1e4
    f = np.zeros(n)
    a = np.zeros(n)
    last_change = np.inf
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        W = loglik_neg_hess_diag(y, f)
        sw = np.sqrt(W)
        B = np.eye(n) + sw[:, None] * K * sw[None, :]
        LB = cholesky(B, lower=True, check_finite=False)
        if ops is not None:
            ops.add_factorization()
        grad = loglik_grad(y, f)
        b = W * f + grad
        c = solve_triangular(LB, sw * (K @ b), lower=True, check_finite=False)
        a = b - sw * solve_triangular(LB, c, lower=True, trans="T", check_finite=False)
        f_new = K @ a
        last_change = float(np.sum((f_new - f) ** 2))
        f = f_new
        if not np.all(np.isfinite(f)):
            raise ConvergenceError("Newton iteration diverged", last_change)
        grad_norm = float(np.max(np.abs(loglik_grad(y, f) - a)))
        if last_change < tol_sq and grad_norm < grad_tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(
            f"Laplace did not converge in {max_iter} iterations", last_change
        )

    # Evidence and posterior factorization at the mode.
    W = loglik_neg_hess_diag(y, f)
    sw = np.sqrt(W)
    B = np.eye(n) + sw[:, None] * K * sw[None, :]
    LB = cholesky(B, lower=True, check_finite=False)
    if ops is not None:
        ops.add_factorization()
    half_log_det_B = float(np.sum(np.log(np.diag(LB))))
    evidence = log_likelihood(y, f) - 0.5 * float(np.dot(a, f)) - half_log_det_B
    G = _inner_chol(km.chol, W, ops=ops)
    return GaussianApprox(
        mean=f,
        log_approx_marginal=float(evidence),
        method=LAPLACE,
        iterations_used=iterations,
        kernel_chol=km.chol,
        inner_chol=G,
    )


def ep_approx(y, km, max_sweeps=EP_MAX_SWEEPS, ops=None):
    """Expectation-propagation approximation of the latent posterior.

    Site updates run in fixed ascending order within each sweep; a site
    whose update would produce a non-positive precision is skipped for
    that sweep.  Convergence is declared when the squared norm of the
    change in the posterior mean over one sweep drops below n / 1e4.

    Returns
    -------
    (GaussianApprox, EPSites)
    """
    y = np.asarray(y, dtype=float)
    K = km.matrix
    n = km.n
    tol_sq = n / 1e4
    nu_site = np.zeros(n)
    tau_site = np.zeros(n)
    Sigma = K.copy()
    mu = np.zeros(n)
    last_change = np.inf
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        mu_old = mu.copy()
        ylist = y.tolist()
        for i in range(n):
            s_ii = Sigma[i, i]
            tau_cav = 1.0 / s_ii - tau_site[i]
            if tau_cav <= 0:
                continue
            nu_cav = mu[i] / s_ii - nu_site[i]
            cav_var = 1.0 / tau_cav
            cav_mean = nu_cav * cav_var
            _, m_hat, v_hat = probit_tilted_moments(cav_mean, cav_var, ylist[i])
            tau_new = 1.0 / v_hat - tau_cav
            if tau_new <= 0:
                continue
            delta_tau = tau_new - tau_site[i]
            tau_site[i] = tau_new
            delta_nu = m_hat / v_hat - nu_cav - nu_site[i]
            nu_site[i] += delta_nu
            coef = delta_tau / (1.0 + delta_tau * s_ii)
            si = Sigma[:, i].copy()
            # In-place rank-one downdate of Sigma and an O(n) refresh of
            # mu = Sigma nu_site (avoids a matrix-vector product per site).
            Sigma = dger(-coef, si, si, a=Sigma.T, overwrite_a=1).T
            mu += (delta_nu - coef * float(si @ nu_site)) * si
        # The n rank-one refreshes above cost O(n^3) in total.
        if ops is not None:
            ops.add_matrix_product()
        Sigma, LB, sw, half_log_det_B = _posterior_from_w(K, tau_site, ops=ops)
        mu = Sigma @ nu_site
        last_change = float(np.sum((mu - mu_old) ** 2))
        if last_change < tol_sq:
            converged = True
            break
    if not converged:
        raise ConvergenceError(
            f"EP did not converge in {max_sweeps} sweeps", last_change
        )
    if np.any(tau_site <= 0):
        raise ConvergenceError("EP finished with unfit sites", last_change)

    sites = _ep_site_normalizers(y, mu, Sigma, nu_site, tau_site)
    evidence = _ep_log_marginal(K, sites, ops=ops)
    G = _inner_chol(km.chol, tau_site, ops=ops)
    # Re-derive the mean through the factored covariance so the exported
    # distribution is exactly self-consistent.
    half = solve_triangular(G, km.chol.T @ nu_site, lower=True, check_finite=False)
    mean = km.chol @ solve_triangular(
        G, half, lower=True, trans="T", check_finite=False
    )
    approx = GaussianApprox(
        mean=mean,
        log_approx_marginal=float(evidence),
        method=EP,
        iterations_used=sweeps,
        kernel_chol=km.chol,
        inner_chol=G,
    )
    return approx, sites


def _ep_site_normalizers(y, mu, Sigma, nu_site, tau_site):
    """Site parameters on the mean/variance scale with log normalizers.

    The log normalizer of site i makes the site Gaussian times the cavity
    integrate to the tilted zeroth moment.
    """
    diag = np.diag(Sigma)
    tau_cav = 1.0 / diag - tau_site
    nu_cav = mu / diag - nu_site
    cav_var = 1.0 / tau_cav
    cav_mean = nu_cav * cav_var
    z = y * cav_mean / np.sqrt(1.0 + cav_var)
    log_zhat = log_ndtr(z)
    sigma2_tilde = 1.0 / tau_site
    mu_tilde = nu_site * sigma2_tilde
    s = cav_var + sigma2_tilde
    z_tilde = log_zhat + 0.5 * np.log(2.0 * np.pi * s) + (cav_mean - mu_tilde) ** 2 / (
        2.0 * s
    )
    return EPSites(z_tilde=z_tilde, mu_tilde=mu_tilde, sigma2_tilde=sigma2_tilde)


def _ep_log_marginal(K, sites, ops=None):
    """Evidence approximation: sum of site normalizers plus the Gaussian
    convolution N(mu_tilde | 0, K + diag(sigma2_tilde))."""
    n = K.shape[0]
    A = K + np.diag(sites.sigma2_tilde)
    LA_ = cholesky(A, lower=True, check_finite=False)
    if ops is not None:
        ops.add_factorization()
    z = solve_triangular(LA_, sites.mu_tilde, lower=True, check_finite=False)
    log_det = 2.0 * float(np.sum(np.log(np.diag(LA_))))
    log_conv = -0.5 * float(np.dot(z, z)) - 0.5 * log_det - n * _LOG_SQRT_2PI
    return float(np.sum(sites.z_tilde)) + log_conv


def prior_approx(km):
    """The GP prior packaged as a GaussianApprox (test hook / baseline).

    Used where an importance distribution equal to the prior is wanted;
    the approximate marginal is left at 0 because no likelihood is
    involved.
    """
    n = km.n
    return GaussianApprox(
        mean=np.zeros(n),
        log_approx_marginal=0.0,
        method="prior",
        iterations_used=0,
        kernel_chol=km.chol,
        inner_chol=np.eye(n),
    )


def run_approx(method, y, km, ops=None):
    """Dispatch on the method tag; returns a GaussianApprox either way."""
    if method == LAPLACE:
        return laplace_approx(y, km, ops=ops)
    if method == EP:
        approx, _ = ep_approx(y, km, ops=ops)
        return approx
    if method == "prior":
        return prior_approx(km)
    raise ValueError(f"unknown approximation method {method!r}")
