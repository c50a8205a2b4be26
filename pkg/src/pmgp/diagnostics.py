"""Chain diagnostics, sampler-correctness harness, and abstention scores.

* effective_sample_size / psrf / acceptance_rate summarize chain traces.
* geweke_test compares two simulators of the joint model -- independent
  draws (theta from the prior, f from the GP, labels from the
  likelihood) against a chain alternating the sampler transition with
  label regeneration -- and reports two-sample KS statistics.  A correct
  transition kernel makes the two distributions identical.
* auc / capacity_scores grade probabilistic predictions, including the
  accuracy-versus-abstention and AUC-versus-abstention areas.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import ks_2samp, rankdata

from .approx import run_approx
from .datasets import draw_labels
from .kernels import build_kernel, gp_log_density, sample_gp_prior
from .priors import free_psi, log_prior_hyper, psi_names, sample_hyper_prior
from .samplers import (
    AA,
    PM,
    SA,
    SURR,
    ChainModel,
    ChainState,
    ProposalConfig,
    aa_mh_step,
    elliptical_slice,
    pm_mh_step,
    sa_mh_step,
    surr_mh_step,
)


def autocorrelations(x):
    """Normalized autocorrelation function of a 1-d trace (FFT based)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    fx = np.fft.rfft(xc, size)
    acov = np.fft.irfft(fx * np.conj(fx), size)[:n].real / n
    if acov[0] <= 0:
        raise ValueError("trace has zero variance; ESS undefined")
    return acov / acov[0]


def effective_sample_size(trace):
    """ESS = N / (1 + 2 sum rho_k) with the initial-monotone-sequence rule.

    Autocorrelations are summed in adjacent pairs, truncated at the first
    non-positive pair, and the kept pairs are forced non-increasing.  The
    result is clipped to (0, N].
    """
    x = np.asarray(trace, dtype=float)
    n = x.shape[0]
    if n < 10:
        raise ValueError("trace too short for an ESS estimate")
    if np.ptp(x) == 0.0:
        raise ValueError("constant trace has undefined variance; ESS undefined")
    rho = autocorrelations(x)
    tau = 0.0
    prev = np.inf
    for k in range(0, n // 2):
        gamma = rho[2 * k] + (rho[2 * k + 1] if 2 * k + 1 < n else 0.0)
        if gamma <= 0.0:
            break
        gamma = min(gamma, prev)
        prev = gamma
        tau += gamma
    tau = max(2.0 * tau - 1.0, 1.0)
    return float(n / tau)


def psrf(chains):
    """Potential scale reduction factor over equal-length chains.

    The classic between/within estimator: with m chains of length t,
    R-hat = sqrt(((t-1)/t * W + (1 + 1/m) * B/t) / W).
    """
    arr = np.asarray(chains, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ValueError("psrf requires at least two chains of equal length")
    m, t = arr.shape
    if t < 10:
        raise ValueError("chains too short for a PSRF estimate")
    means = arr.mean(axis=1)
    w = float(np.mean(arr.var(axis=1, ddof=1)))
    b_over_t = float(np.var(means, ddof=1))
    if w <= 0:
        raise ValueError("zero within-chain variance; PSRF undefined")
    v = (t - 1) / t * w + (1.0 + 1.0 / m) * b_over_t
    return float(np.sqrt(v / w))


def acceptance_rate(accept_flags):
    """Mean of the acceptance indicator."""
    flags = np.asarray(accept_flags, dtype=float)
    if flags.size == 0:
        raise ValueError("empty acceptance record")
    return float(np.mean(flags))


def min_ess(trace_matrix):
    """Smallest per-column ESS of a (T, p) trace block."""
    arr = np.atleast_2d(np.asarray(trace_matrix, dtype=float))
    return min(effective_sample_size(arr[:, j]) for j in range(arr.shape[1]))


# ---------------------------------------------------------------------------
# Getting-it-right harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GewekeResult:
    """Two-sample KS statistics per monitored quantity.

    ``statistics`` maps quantity -> (D, p).  The p-value uses the
    successive side's effective sample size in place of its nominal
    length: chain samples are autocorrelated, and the nominal-length KS
    test would reject correct samplers simply for mixing slowly.
    ``ess`` records the effective sizes used.
    """

    statistics: dict
    marginal: dict
    successive: dict
    ess: dict

    def p_values(self):
        return {k: v[1] for k, v in self.statistics.items()}

    def min_p_value(self):
        return min(self.p_values().values())


def ks_pvalue_effective(d_stat, m_eff, n_eff):
    """Asymptotic two-sample KS p-value at the given effective sizes."""
    from scipy.special import kolmogorov

    en = np.sqrt(m_eff * n_eff / (m_eff + n_eff))
    return float(kolmogorov(en * d_stat))


def _pm_log_weight(model, state):
    """Importance weight of the chain's latent vector under its cached q."""
    return (
        model.loglik_fn(state.latents)
        + gp_log_density(state.latents, state.km)
        - state.q.log_density(state.latents)
    )


def geweke_test(
    scheme,
    priors,
    n=8,
    d=1,
    kind="isotropic",
    n_samples=10_000,
    thin=15,
    latent_repeats=5,
    theta_repeats=1,
    approx_method="la",
    step_size=1.8,
    seed=0,
    include_jacobian=True,
    quantities=("psi_sigma", "psi_tau", "f1"),
):
    """Marginal-conditional versus successive-conditional comparison.

    The successive side alternates (i) the scheme's hyper-parameter
    transition, (ii) ``latent_repeats`` elliptical-slice updates of f,
    and (iii) label regeneration y ~ p(y | f); every ``thin``-th state is
    recorded.  For the pseudo-marginal scheme the chain's latent vector
    doubles as the single importance draw (n_imp = 1), under which the
    joint update is exactly invariant for p(theta, f, y).

    ``scheme`` may also be "exact" -- fresh prior redraws standing in for
    the transition -- which calibrates the harness itself.

    ``include_jacobian=False`` drops the log-transform Jacobian from the
    sampled prior density (a deliberate bug the test must detect).
    """
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, d))
    m = 1 if kind == "isotropic" else d

    def record(store, hyper, f):
        psi = free_psi(hyper, priors)
        for j, name in enumerate(psi_names(m, priors)):
            store[name].append(psi[j])
        store["f1"].append(f[0])

    names = [q for q in quantities if q in psi_names(m, priors) or q == "f1"]
    marginal = {name: [] for name in names}
    successive = {name: [] for name in names}

    # Marginal-conditional side: independent joint draws.
    for _ in range(n_samples):
        hyper = sample_hyper_prior(priors, rng, m)
        km = build_kernel(X, hyper, kind)
        f = sample_gp_prior(km, rng)
        record(marginal, hyper, f)

    # Successive-conditional side.
    log_prior = lambda h: log_prior_hyper(h, priors, include_jacobian=include_jacobian)
    hyper = sample_hyper_prior(priors, rng, m)
    km = build_kernel(X, hyper, kind)
    f = sample_gp_prior(km, rng)
    y = draw_labels(f, rng)
    model = ChainModel(X=X, y=y, kind=kind, priors=priors, log_prior=log_prior)
    state = ChainState(hyper=hyper, latents=f, km=km)
    if scheme == PM:
        state.q = run_approx(approx_method, y, km)
        state.log_p_tilde = _pm_log_weight(model, state)
    proposal = ProposalConfig(step_sizes=np.full(free_psi(hyper, priors).shape[0], step_size))

    for _ in range(n_samples):
        for _ in range(thin):
            if scheme == "exact":
                state.hyper = sample_hyper_prior(priors, rng, m)
                state.km = build_kernel(X, state.hyper, kind)
                state.latents = sample_gp_prior(state.km, rng)
                state.log_lik_f = None
                state.log_gp = None
            elif scheme == PM:
                for _ in range(theta_repeats):
                    state, _info = pm_mh_step(
                        state, model, proposal, approx_method, 1, rng,
                        couple_latents=True,
                    )
            elif scheme == SA:
                for _ in range(theta_repeats):
                    state, _info = sa_mh_step(state, model, proposal, rng)
            elif scheme == AA:
                for _ in range(theta_repeats):
                    state, _info = aa_mh_step(state, model, proposal, rng)
            elif scheme == SURR:
                for _ in range(theta_repeats):
                    state, _info = surr_mh_step(
                        state, model, proposal, rng, approx_method=approx_method
                    )
            else:
                raise ValueError(f"unknown scheme {scheme!r}")
            if scheme != "exact" and latent_repeats > 0:
                ll = state.log_lik_f
                for _ in range(latent_repeats):
                    state.latents, ll = elliptical_slice(
                        state.latents, state.km.chol, model.loglik_fn, rng,
                        cur_log_lik=ll,
                    )
                state.log_lik_f = ll
                state.log_gp = None
                if scheme == PM:
                    state.log_p_tilde = _pm_log_weight(model, state)
            # Regenerate the data from the current latents.
            y = draw_labels(state.latents, rng)
            model = ChainModel(X=X, y=y, kind=kind, priors=priors, log_prior=log_prior)
            state.log_lik_f = None
            state.log_gp = None
            state.site_vars = None
            if scheme == PM:
                state.q = run_approx(approx_method, y, state.km)
                state.log_p_tilde = _pm_log_weight(model, state)
        record(successive, state.hyper, state.latents)

    stats = {}
    ess = {}
    for name in names:
        a = np.asarray(marginal[name])
        b = np.asarray(successive[name])
        d_stat = float(ks_2samp(a, b).statistic)
        n_eff = min(effective_sample_size(b), float(b.shape[0]))
        ess[name] = n_eff
        stats[name] = (d_stat, ks_pvalue_effective(d_stat, a.shape[0], n_eff))
    return GewekeResult(
        statistics=stats,
        marginal={k: np.asarray(v) for k, v in marginal.items()},
        successive={k: np.asarray(v) for k, v in successive.items()},
        ess=ess,
    )


# ---------------------------------------------------------------------------
# Prediction quality
# ---------------------------------------------------------------------------


def auc(probs, labels):
    """Area under the ROC curve (rank formulation, ties averaged)."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    pos = labels == np.max(labels)
    n_pos = int(np.sum(pos))
    n_neg = int(labels.shape[0] - n_pos)
    if n_pos == 0 or n_neg == 0 or np.unique(labels).size != 2:
        raise ValueError("AUC requires both classes present")
    ranks = rankdata(probs)
    return float(
        (np.sum(ranks[pos]) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    )


@dataclass(frozen=True)
class CapacityScores:
    """Normalized areas under accuracy/AUC versus degree of abstention."""

    capacity_accuracy: float
    capacity_auc: float
    curve: list  # (abstention, accuracy, auc) per threshold


def capacity_scores(probs, labels, rho_grid=None):
    """Abstention sweep of accuracy and AUC.

    At threshold rho, points with 0.5 - rho < p < 0.5 + rho abstain; the
    remaining points are scored.  The two curves are integrated against
    the abstention fraction by the trapezoid rule and normalized by the
    largest abstention attained.  When the retained set loses a class the
    AUC carries its previous value forward; when everything abstains the
    curves stop.
    """
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    if probs.size == 0:
        raise ValueError("empty test set")
    if rho_grid is None:
        rho_grid = np.round(np.arange(0, 51) * 0.01, 2)
    n = probs.shape[0]
    positive = labels == np.max(labels)
    predicted_pos = probs > 0.5
    correct = predicted_pos == positive

    curve = []
    last_auc = None
    for rho in rho_grid:
        abstain = (probs > 0.5 - rho) & (probs < 0.5 + rho)
        keep = ~abstain
        n_keep = int(np.sum(keep))
        if n_keep == 0:
            break
        abstention = 1.0 - n_keep / n
        accuracy = float(np.mean(correct[keep]))
        kept_labels = labels[keep]
        if np.unique(kept_labels).size == 2:
            last_auc = auc(probs[keep], kept_labels)
        if last_auc is None:
            # One-class retained set before any AUC was defined: grade it
            # by accuracy so the curve starts somewhere sensible.
            last_auc = accuracy
        curve.append((float(abstention), accuracy, float(last_auc)))

    abst = np.array([c[0] for c in curve])
    acc = np.array([c[1] for c in curve])
    aucs = np.array([c[2] for c in curve])
    max_abst = float(abst[-1]) if abst.size else 0.0
    if max_abst <= 0.0:
        cap_acc, cap_auc = float(acc[-1]), float(aucs[-1])
    else:
        cap_acc = float(np.trapezoid(acc, abst) / max_abst)
        cap_auc = float(np.trapezoid(aucs, abst) / max_abst)
    return CapacityScores(
        capacity_accuracy=cap_acc, capacity_auc=cap_auc, curve=curve
    )
