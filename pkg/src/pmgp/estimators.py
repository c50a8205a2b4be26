"""Scikit-learn style classifiers wrapping the sampling machinery.

``PseudoMarginalGPClassifier`` is the fully Bayesian model: fit runs
MCMC over hyper-parameters and latents, predict averages the predictive
probability over the retained posterior samples.

``TypeIIGPClassifier`` is the point-estimate baseline: fit maximizes the
EP (or Laplace) approximate marginal likelihood over the
hyper-parameters, predict integrates the latents under the Gaussian
approximation at that single value.
"""

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .approx import run_approx
from .config import ExperimentConfig
from .kernels import Hyperparams, build_kernel
from .predictive import gaussian_predictive_batch, mc_predictive_batch
from .samplers import run_chains


def _validate_binary(X, y):
    X, y = check_X_y(X, y, dtype=float)
    classes = np.unique(y)
    if classes.shape[0] != 2:
        raise ValueError("exactly two classes required")
    y_pm = np.where(y == classes[1], 1.0, -1.0)
    return X, y_pm, classes


class PseudoMarginalGPClassifier(BaseEstimator, ClassifierMixin):
    """GP probit classifier with hyper-parameters integrated out by MCMC.

    Parameters mirror the experiment configuration: ``scheme`` selects
    the hyper-parameter transition (pm / sa / aa / surr), ``approx`` the
    Gaussian approximation used by the pseudo-marginal estimator, and
    ``n_imp`` the number of importance samples.  ``b_tau=None`` resolves
    to the default rule 1/sqrt(d).
    """

    def __init__(
        self,
        kind="isotropic",
        scheme="pm",
        approx="ep",
        n_imp=64,
        n_chains=2,
        n_iterations=1000,
        burn_in=500,
        latent_repeats=10,
        theta_repeats=1,
        latent_stride=10,
        a_sigma=1.2,
        b_sigma=0.2,
        a_tau=1.0,
        b_tau=None,
        initial_step=0.4,
        random_state=0,
    ):
        self.kind = kind
        self.scheme = scheme
        self.approx = approx
        self.n_imp = n_imp
        self.n_chains = n_chains
        self.n_iterations = n_iterations
        self.burn_in = burn_in
        self.latent_repeats = latent_repeats
        self.theta_repeats = theta_repeats
        self.latent_stride = latent_stride
        self.a_sigma = a_sigma
        self.b_sigma = b_sigma
        self.a_tau = a_tau
        self.b_tau = b_tau
        self.initial_step = initial_step
        self.random_state = random_state

    def fit(self, X, y):
        X, y_pm, classes = _validate_binary(X, y)
        cfg = ExperimentConfig(
            scheme=self.scheme,
            kind=self.kind,
            approx_method=self.approx,
            n_imp=self.n_imp,
            n_chains=self.n_chains,
            n_iterations=self.n_iterations,
            burn_in=self.burn_in,
            latent_repeats=self.latent_repeats,
            theta_repeats=self.theta_repeats,
            latent_stride=self.latent_stride,
            a_sigma=self.a_sigma,
            b_sigma=self.b_sigma,
            a_tau=self.a_tau,
            b_tau=self.b_tau,
            initial_step=self.initial_step,
            seed=self.random_state,
        ).validate()
        priors = cfg.priors(X.shape[1])
        traces = run_chains(
            X, y_pm, priors, cfg.gibbs_config(), kind=self.kind,
            seeds=cfg.chain_seeds(),
        )
        samples = [s for tr in traces for s in tr.samples]
        if not samples:
            raise ValueError("no posterior samples retained; increase n_iterations")
        self.classes_ = classes
        self.X_train_ = X
        self.y_train_ = y_pm
        self.traces_ = traces
        self.samples_ = samples
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "samples_")
        X = check_array(X, dtype=float)
        p_pos = mc_predictive_batch(self.samples_, self.X_train_, X, self.kind)
        return np.column_stack([1.0 - p_pos, p_pos])

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[(proba[:, 1] > 0.5).astype(int)]


class TypeIIGPClassifier(BaseEstimator, ClassifierMixin):
    """GP probit classifier with hyper-parameters set by type-II ML.

    The approximate log marginal likelihood (EP by default) is maximized
    over psi = log(sigma, tau) by Nelder-Mead; predictions integrate the
    latents under the Gaussian approximation at the optimum.
    """

    def __init__(self, kind="isotropic", approx="ep", max_opt_iter=200):
        self.kind = kind
        self.approx = approx
        self.max_opt_iter = max_opt_iter

    def fit(self, X, y):
        X, y_pm, classes = _validate_binary(X, y)
        d = X.shape[1]
        m = 1 if self.kind == "isotropic" else d

        def negative_evidence(psi):
            try:
                hyper = Hyperparams(psi[0], psi[1:])
                km = build_kernel(X, hyper, self.kind)
                q = run_approx(self.approx, y_pm, km)
            except Exception:
                return 1e10
            return -q.log_approx_marginal

        best = None
        for start in (np.zeros(1 + m), np.concatenate([[0.5], np.full(m, -1.0)])):
            res = minimize(
                negative_evidence,
                start,
                method="Nelder-Mead",
                options={"maxiter": self.max_opt_iter, "xatol": 1e-3, "fatol": 1e-4},
            )
            if best is None or res.fun < best.fun:
                best = res
        psi = best.x
        self.hyper_ = Hyperparams(psi[0], psi[1:])
        self.km_ = build_kernel(X, self.hyper_, self.kind)
        self.q_ = run_approx(self.approx, y_pm, self.km_)
        self.log_marginal_ = float(-best.fun)
        self.classes_ = classes
        self.X_train_ = X
        self.y_train_ = y_pm
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "q_")
        X = check_array(X, dtype=float)
        p_pos = gaussian_predictive_batch(
            X, self.X_train_, self.km_, self.q_, self.hyper_, self.kind
        )
        return np.column_stack([1.0 - p_pos, p_pos])

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[(proba[:, 1] > 0.5).astype(int)]
