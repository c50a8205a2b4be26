"""Squared-exponential covariance and kernel-matrix factorization.

The covariance between two inputs is

    k(xi, xj) = sigma * exp(-0.5 * sum_k (xi_k - xj_k)^2 / tau_k^2)

with a single length-scale tau for the isotropic kind or one per covariate
for ARD.  ``sigma`` is the marginal prior variance of each latent value,
so diag(K) == sigma.  Hyper-parameters are carried in log space.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular

ISOTROPIC = "isotropic"
ARD = "ard"
KINDS = (ISOTROPIC, ARD)

# Jitter ladder, in units of sigma, tried in order after a bare attempt.
JITTER_LADDER = (1e-10, 1e-8, 1e-6, 1e-4)

_LOG_2PI = np.log(2.0 * np.pi)


class FactorizationError(Exception):
    """Kernel matrix not positive definite after maximum jitter escalation."""

    def __init__(self, message, attempted_jitter):
        super().__init__(message)
        self.attempted_jitter = attempted_jitter


@dataclass(frozen=True)
class Hyperparams:
    """Covariance hyper-parameters in log space.

    ``log_lengthscales`` has length 1 for the isotropic kind and length d
    for ARD.
    """

    log_sigma: float
    log_lengthscales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.log_lengthscales, dtype=float))
        object.__setattr__(self, "log_lengthscales", ls)
        if not np.isfinite(self.log_sigma) or not np.all(np.isfinite(ls)):
            raise ValueError("hyper-parameters must be finite in log space")

    @property
    def sigma(self):
        return float(np.exp(self.log_sigma))

    @property
    def lengthscales(self):
        return np.exp(self.log_lengthscales)

    @classmethod
    def from_values(cls, sigma, lengthscales):
        ls = np.atleast_1d(np.asarray(lengthscales, dtype=float))
        if sigma <= 0 or np.any(ls <= 0):
            raise ValueError("sigma and length-scales must be positive")
        return cls(float(np.log(sigma)), np.log(ls))


def validate_kind(kind, d, hyper):
    """Check that the length-scale vector is consistent with the kind."""
    if kind not in KINDS:
        raise ValueError(f"unknown covariance kind {kind!r}")
    m = hyper.log_lengthscales.shape[0]
    if kind == ISOTROPIC and m != 1:
        raise ValueError("isotropic covariance requires exactly one length-scale")
    if kind == ARD and m != d:
        raise ValueError(f"ARD covariance requires {d} length-scales, got {m}")


def kernel_eval(xi, xj, hyper, kind=ISOTROPIC):
    """Covariance between two input vectors.

    Returns a value in (0, sigma], equal to sigma when xi == xj.
    """
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    if xi.shape != xj.shape or xi.ndim != 1:
        raise ValueError("xi and xj must be vectors of equal length")
    validate_kind(kind, xi.shape[0], hyper)
    scaled = (xi - xj) / _broadcast_lengthscales(hyper, kind, xi.shape[0])
    return hyper.sigma * float(np.exp(-0.5 * np.dot(scaled, scaled)))


def _broadcast_lengthscales(hyper, kind, d):
    ls = hyper.lengthscales
    if kind == ISOTROPIC:
        return np.full(d, ls[0])
    return ls


def kernel_matrix(X, hyper, kind=ISOTROPIC):
    """Dense covariance matrix between the rows of X.

    The squared distances are computed from elementwise differences so the
    result is exactly symmetric ((a-b)^2 == (b-a)^2 in floating point).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    validate_kind(kind, d, hyper)
    Z = X / _broadcast_lengthscales(hyper, kind, d)
    diff = Z[:, None, :] - Z[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    return hyper.sigma * np.exp(-0.5 * sq)


def cross_kernel(X, x_star, hyper, kind=ISOTROPIC):
    """Vector of covariances k(x_i, x_star) for every row of X."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    x_star = np.asarray(x_star, dtype=float)
    validate_kind(kind, X.shape[1], hyper)
    scale = _broadcast_lengthscales(hyper, kind, X.shape[1])
    diff = (X - x_star[None, :]) / scale
    return hyper.sigma * np.exp(-0.5 * np.einsum("ij,ij->i", diff, diff))


def cross_kernel_matrix(X, X_star, hyper, kind=ISOTROPIC):
    """Covariances between the rows of X and the rows of X_star, (n, p)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
    validate_kind(kind, X.shape[1], hyper)
    scale = _broadcast_lengthscales(hyper, kind, X.shape[1])
    diff = (X[:, None, :] - X_star[None, :, :]) / scale
    return hyper.sigma * np.exp(-0.5 * np.einsum("ijk,ijk->ij", diff, diff))


@dataclass(frozen=True)
class KernelMatrix:
    """A factorized kernel matrix.

    ``chol`` is the lower Cholesky factor of matrix + jitter*I and
    ``log_det`` its log-determinant; ``jitter`` records the diagonal
    boost that was actually needed (0 for well-conditioned matrices).
    """

    matrix: np.ndarray
    chol: np.ndarray
    log_det: float
    jitter: float

    @property
    def n(self):
        return self.matrix.shape[0]

    def solve(self, b):
        """(K + jitter*I)^-1 b through two triangular solves."""
        z = solve_triangular(self.chol, b, lower=True, check_finite=False)
        return solve_triangular(self.chol, z, lower=True, trans="T",
                                check_finite=False)

    def half_solve(self, b):
        """L^-1 b, the forward substitution half of a full solve."""
        return solve_triangular(self.chol, b, lower=True, check_finite=False)


def chol_with_jitter(A, scale, ops=None):
    """Lower Cholesky factor of A, escalating diagonal jitter on failure.

    ``scale`` sets the units of the jitter ladder (the diagonal magnitude
    of A).  Returns (chol, jitter).  Raises FactorizationError when even
    the largest jitter fails.
    """
    n = A.shape[0]
    attempted = 0.0
    for level in (0.0,) + tuple(JITTER_LADDER):
        attempted = level * scale
        try:
            target = A if level == 0.0 else A + attempted * np.eye(n)
            L = cholesky(target, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        if ops is not None:
            ops.add_factorization()
        return L, attempted
    raise FactorizationError(
        f"matrix not positive definite with jitter up to {attempted:g}", attempted
    )


def build_kernel(X, hyper, kind=ISOTROPIC, ops=None):
    """Covariance matrix of the rows of X together with its factorization."""
    K = kernel_matrix(X, hyper, kind)
    L, jitter = chol_with_jitter(K, hyper.sigma, ops=ops)
    log_det = 2.0 * float(np.sum(np.log(np.diag(L))))
    return KernelMatrix(matrix=K, chol=L, log_det=log_det, jitter=jitter)


def gp_log_density(f, km):
    """Log density of N(f | 0, K) evaluated through the triangular factor."""
    f = np.asarray(f, dtype=float)
    if f.shape[0] != km.n:
        raise ValueError("f has wrong length for this kernel matrix")
    z = km.half_solve(f)
    return float(-0.5 * np.dot(z, z) - 0.5 * km.log_det - 0.5 * km.n * _LOG_2PI)


def sample_gp_prior(km, rng):
    """One draw from N(0, K) as L @ nu with nu standard normal."""
    nu = rng.standard_normal(km.n)
    return km.chol @ nu


@dataclass
class OpCounter:
    """Tally of cubic-cost linear-algebra operations for a chain.

    Counts Cholesky factorizations, triangular solves against an n-by-n
    right-hand side, and n-by-n matrix products; elementwise and
    matrix-vector work is excluded.
    """

    factorizations: int = 0
    matrix_solves: int = 0
    matrix_products: int = 0

    def add_factorization(self, k=1):
        self.factorizations += k

    def add_matrix_solve(self, k=1):
        self.matrix_solves += k

    def add_matrix_product(self, k=1):
        self.matrix_products += k

    @property
    def total(self):
        return self.factorizations + self.matrix_solves + self.matrix_products

    def snapshot(self):
        return self.total
