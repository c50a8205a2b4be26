"""Gamma priors on covariance hyper-parameters.

Sampling operates on psi = log(parameter); the prior is declared on the
positive scale, so every density evaluated in psi space carries the
Jacobian term exp(psi) (i.e. + psi on the log scale).  Parameters can be
held fixed, in which case they contribute nothing to the target and are
never proposed.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .kernels import Hyperparams


@dataclass(frozen=True)
class GammaPrior:
    """Shape-rate Gamma distribution."""

    shape: float
    rate: float

    def __post_init__(self):
        if self.shape <= 0 or self.rate <= 0:
            raise ValueError("Gamma shape and rate must be positive")

    def log_pdf(self, x):
        return gamma_log_pdf(x, self)

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, 1.0 / self.rate, size=size)


def gamma_log_pdf(x, prior):
    """Log density of Ga(x | shape, rate); raises on x <= 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("Gamma density requires x > 0")
    a, b = prior.shape, prior.rate
    out = a * np.log(b) - gammaln(a) + (a - 1.0) * np.log(x) - b * x
    return float(out) if out.ndim == 0 else out


def default_lengthscale_prior(d):
    """Shape 1, rate 1/sqrt(d): the wider the input space, the longer the
    length-scales favoured a priori."""
    return GammaPrior(shape=1.0, rate=1.0 / np.sqrt(d))


@dataclass(frozen=True)
class HyperPriors:
    """Independent Gamma priors for sigma and each length-scale.

    ``fix_sigma`` / ``fix_tau`` remove the corresponding parameters from
    the sampled vector (their values stay at whatever the chain was
    initialized with).
    """

    sigma: GammaPrior = GammaPrior(shape=1.2, rate=0.2)
    tau: GammaPrior = GammaPrior(shape=1.0, rate=1.0)
    fix_sigma: bool = False
    fix_tau: bool = False

    def free_size(self, n_lengthscales):
        size = 0 if self.fix_sigma else 1
        if not self.fix_tau:
            size += n_lengthscales
        return size


def log_prior_hyper(hyper, priors, include_jacobian=True):
    """Log prior of the free hyper-parameters evaluated in psi space.

    Adds one +psi Jacobian term per free parameter so that
    Metropolis-Hastings on psi targets the declared Gamma priors on the
    positive scale.  ``include_jacobian=False`` exists only to let tests
    demonstrate that omitting the term is detectably wrong.
    """
    total = 0.0
    if not priors.fix_sigma:
        total += gamma_log_pdf(hyper.sigma, priors.sigma)
        if include_jacobian:
            total += hyper.log_sigma
    if not priors.fix_tau:
        taus = hyper.lengthscales
        total += float(np.sum(gamma_log_pdf(taus, priors.tau)))
        if include_jacobian:
            total += float(np.sum(hyper.log_lengthscales))
    return float(total)


def sample_hyper_prior(priors, rng, n_lengthscales=1, base=None):
    """Draw hyper-parameters from their priors.

    Fixed parameters are copied from ``base`` (required when a parameter
    is fixed).
    """
    if (priors.fix_sigma or priors.fix_tau) and base is None:
        raise ValueError("base hyper-parameters required when a parameter is fixed")
    if priors.fix_sigma:
        log_sigma = base.log_sigma
    else:
        log_sigma = float(np.log(priors.sigma.sample(rng)))
    if priors.fix_tau:
        log_ls = base.log_lengthscales.copy()
    else:
        log_ls = np.log(priors.tau.sample(rng, size=n_lengthscales))
    return Hyperparams(log_sigma, log_ls)


def free_psi(hyper, priors):
    """Pack the free parameters into a flat psi vector (sigma first)."""
    parts = []
    if not priors.fix_sigma:
        parts.append([hyper.log_sigma])
    if not priors.fix_tau:
        parts.append(hyper.log_lengthscales)
    if not parts:
        return np.empty(0)
    return np.concatenate(parts)


def hyper_from_psi(psi, hyper, priors):
    """Rebuild Hyperparams from a flat psi vector, keeping fixed values."""
    psi = np.asarray(psi, dtype=float)
    idx = 0
    if priors.fix_sigma:
        log_sigma = hyper.log_sigma
    else:
        log_sigma = float(psi[0])
        idx = 1
    if priors.fix_tau:
        log_ls = hyper.log_lengthscales.copy()
    else:
        log_ls = psi[idx:].copy()
        if log_ls.shape[0] != hyper.log_lengthscales.shape[0]:
            raise ValueError("psi vector has wrong length")
    return Hyperparams(log_sigma, log_ls)


def psi_names(d_lengthscales, priors):
    """Column names for the free psi vector, in packing order."""
    names = []
    if not priors.fix_sigma:
        names.append("psi_sigma")
    if not priors.fix_tau:
        if d_lengthscales == 1:
            names.append("psi_tau")
        else:
            names.extend(f"psi_tau{i + 1}" for i in range(d_lengthscales))
    return names
