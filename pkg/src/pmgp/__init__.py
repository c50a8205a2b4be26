"""Fully Bayesian Gaussian-process probit classification.

Gaussian approximations (Laplace / expectation propagation) to the
latent posterior feed an unbiased importance-sampling estimate of the
marginal likelihood, which a pseudo-marginal Metropolis-Hastings sampler
uses to draw covariance hyper-parameters from their exact posterior.
Reparameterized baseline samplers, convergence diagnostics, and
abstention-based uncertainty scores round out the toolkit.
"""

__version__ = "0.1.0"

from .approx import (
    ConvergenceError,
    EPSites,
    GaussianApprox,
    ep_approx,
    laplace_approx,
    probit_tilted_moments,
)
from .datasets import Dataset, Standardizer, generate_synthetic, ingest_csv
from .diagnostics import (
    CapacityScores,
    acceptance_rate,
    auc,
    capacity_scores,
    effective_sample_size,
    geweke_test,
    psrf,
)
from .estimators import PseudoMarginalGPClassifier, TypeIIGPClassifier
from .importance import PMEstimate, importance_log_marginal, pm_posterior_curve
from .kernels import (
    FactorizationError,
    Hyperparams,
    KernelMatrix,
    build_kernel,
    gp_log_density,
    kernel_eval,
    sample_gp_prior,
)
from .likelihoods import log_likelihood, loglik_grad, loglik_neg_hess_diag
from .predictive import (
    latent_predictive_gaussian,
    mc_predictive,
    mc_predictive_batch,
    probit_predictive,
)
from .priors import GammaPrior, HyperPriors, gamma_log_pdf, log_prior_hyper
from .samplers import (
    ChainModel,
    ChainState,
    GibbsConfig,
    ProposalConfig,
    aa_mh_step,
    adapt_proposal,
    elliptical_slice,
    gibbs_run,
    pm_mh_step,
    run_chains,
    sa_mh_step,
    surr_mh_step,
)

__all__ = [
    "CapacityScores",
    "ChainModel",
    "ChainState",
    "ConvergenceError",
    "Dataset",
    "EPSites",
    "FactorizationError",
    "GammaPrior",
    "GaussianApprox",
    "GibbsConfig",
    "HyperPriors",
    "Hyperparams",
    "KernelMatrix",
    "PMEstimate",
    "ProposalConfig",
    "PseudoMarginalGPClassifier",
    "Standardizer",
    "TypeIIGPClassifier",
    "aa_mh_step",
    "acceptance_rate",
    "adapt_proposal",
    "auc",
    "build_kernel",
    "capacity_scores",
    "effective_sample_size",
    "elliptical_slice",
    "ep_approx",
    "gamma_log_pdf",
    "generate_synthetic",
    "geweke_test",
    "gibbs_run",
    "gp_log_density",
    "importance_log_marginal",
    "ingest_csv",
    "kernel_eval",
    "laplace_approx",
    "latent_predictive_gaussian",
    "log_likelihood",
    "log_prior_hyper",
    "loglik_grad",
    "loglik_neg_hess_diag",
    "mc_predictive",
    "mc_predictive_batch",
    "pm_mh_step",
    "pm_posterior_curve",
    "probit_predictive",
    "probit_tilted_moments",
    "psrf",
    "run_chains",
    "sa_mh_step",
    "sample_gp_prior",
    "surr_mh_step",
]
