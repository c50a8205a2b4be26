"""MCMC transition operators and the Gibbs driver.

Hyper-parameter updates are Gaussian random walks on psi = log(theta),
under one of four targets:

* ``pm``   -- Metropolis-Hastings against an unbiased importance-sampling
  estimate of the marginal likelihood (the estimate for the incumbent is
  cached and never recomputed while the chain sits at the same value);
* ``sa``   -- conditioning on the latent vector f;
* ``aa``   -- conditioning on the whitened vector nu with f = L nu;
* ``surr`` -- conditioning on whitened variables under an auxiliary
  noisy copy of f with per-site variances taken from a Gaussian
  approximation.

Latent variables are refreshed by elliptical slice sampling, which needs
no tuning and only matrix-vector work once K is factorized.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular

from .approx import ConvergenceError, laplace_approx, ep_approx, run_approx
from .importance import importance_log_marginal
from .kernels import (
    FactorizationError,
    KernelMatrix,
    OpCounter,
    build_kernel,
    chol_with_jitter,
    gp_log_density,
)
from .likelihoods import log_likelihood, loglik_neg_hess_diag, probit_loglik_fn
from .priors import free_psi, hyper_from_psi, log_prior_hyper, psi_names, sample_hyper_prior

PM = "pm"
SA = "sa"
AA = "aa"
SURR = "surr"
SCHEMES = (PM, SA, AA, SURR)

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ProposalConfig:
    """Random-walk scales on psi plus the acceptance band they are tuned to."""

    step_sizes: np.ndarray
    target_acceptance: float = 0.25
    band_low: float = 0.20
    band_high: float = 0.30
    adaptation_window: int = 100

    def __post_init__(self):
        steps = np.atleast_1d(np.asarray(self.step_sizes, dtype=float))
        object.__setattr__(self, "step_sizes", steps)
        if np.any(steps <= 0):
            raise ValueError("step sizes must be positive")
        if not 0.0 < self.target_acceptance < 1.0:
            raise ValueError("target acceptance must lie in (0, 1)")


@dataclass(frozen=True)
class ChainModel:
    """The inference problem a chain operates on.

    ``log_prior`` and ``log_lik`` default to the Gamma prior on the free
    hyper-parameters (with Jacobian) and the probit likelihood of y;
    tests can substitute either.  ``log_lik`` left at None lets the
    importance sampler take its vectorized probit path.
    """

    X: np.ndarray
    y: np.ndarray
    kind: str
    priors: object
    log_prior: object = None
    log_lik: object = None

    def __post_init__(self):
        if self.log_prior is None:
            priors = self.priors
            object.__setattr__(
                self, "log_prior", lambda h: log_prior_hyper(h, priors)
            )
        if self.log_lik is None:
            object.__setattr__(self, "_loglik_fn", probit_loglik_fn(self.y))
        else:
            object.__setattr__(self, "_loglik_fn", self.log_lik)

    @property
    def loglik_fn(self):
        return self._loglik_fn


@dataclass
class ChainState:
    """Current chain position with the caches each scheme relies on."""

    hyper: object
    latents: np.ndarray
    km: KernelMatrix
    log_p_tilde: float = None
    log_gp: float = None
    log_lik_f: float = None
    q: object = None  # Gaussian approximation cached at the incumbent (PM)
    site_vars: np.ndarray = None  # S_theta cached at the incumbent (SURR)


@dataclass(frozen=True)
class StepInfo:
    accepted: bool
    log_accept: float
    failed: bool = False


def elliptical_slice(f, chol, log_lik_fn, rng, cur_log_lik=None):
    """One elliptical-slice update of f under a Gaussian prior factor.

    Always terminates: the angle bracket shrinks toward zero, where the
    proposal coincides with the current point whose likelihood exceeds
    the slice level by construction.

    Returns (f_new, log_lik_new).
    """
    if cur_log_lik is None:
        cur_log_lik = log_lik_fn(f)
    nu = chol @ rng.standard_normal(f.shape[0])
    u = rng.uniform()
    while u <= 0.0:
        u = rng.uniform()
    log_level = cur_log_lik + math.log(u)
    angle = rng.uniform(0.0, 2.0 * math.pi)
    lo, hi = angle - 2.0 * math.pi, angle
    while True:
        f_new = f * math.cos(angle) + nu * math.sin(angle)
        ll = log_lik_fn(f_new)
        if ll > log_level:
            return f_new, ll
        if angle < 0.0:
            lo = angle
        else:
            hi = angle
        angle = rng.uniform(lo, hi)


def _propose_hyper(state, model, proposal, rng):
    psi = free_psi(state.hyper, model.priors)
    psi_new = psi + proposal.step_sizes * rng.standard_normal(psi.shape[0])
    return hyper_from_psi(psi_new, state.hyper, model.priors)


def _accept(log_accept, rng):
    """Symmetric-proposal MH decision: accept iff min(1, e^la) > u."""
    a = math.exp(min(log_accept, 0.0))
    return a > rng.uniform()


def pm_mh_step(
    state,
    model,
    proposal,
    approx_method,
    n_imp,
    rng,
    ops=None,
    use_approx_marginal=False,
    couple_latents=False,
    instrument=None,
):
    """Pseudo-marginal MH update of the hyper-parameters.

    The incumbent estimate ``state.log_p_tilde`` is reused verbatim; a
    fresh estimate is computed only for the proposal.  A factorization or
    approximation failure at the proposed value counts as a rejection.

    With ``use_approx_marginal`` the deterministic approximate evidence
    stands in for the importance estimate (burn-in warm start).  With
    ``couple_latents`` (requires n_imp == 1) an accepted proposal also
    installs its importance draw as the chain's latent vector, which
    makes the joint update exactly invariant for p(theta, f | y).
    """
    hyper_new = _propose_hyper(state, model, proposal, rng)
    if instrument is not None:
        instrument["proposals"] = instrument.get("proposals", 0) + 1
    try:
        km_new = build_kernel(model.X, hyper_new, model.kind, ops=ops)
        q_new = run_approx(approx_method, model.y, km_new, ops=ops)
        draw = None
        if use_approx_marginal:
            log_pt_new = q_new.log_approx_marginal
        else:
            est, draws, _ = importance_log_marginal(
                model.y,
                km_new,
                q_new,
                n_imp,
                rng,
                log_lik=model.log_lik,
                return_draws=True,
            )
            log_pt_new = est.log_p_tilde
            draw = draws[0]
        if instrument is not None:
            instrument["estimates"] = instrument.get("estimates", 0) + 1
    except (FactorizationError, ConvergenceError):
        return state, StepInfo(accepted=False, log_accept=-np.inf, failed=True)
    log_accept = (log_pt_new + model.log_prior(hyper_new)) - (
        state.log_p_tilde + model.log_prior(state.hyper)
    )
    if _accept(log_accept, rng):
        state.hyper = hyper_new
        state.km = km_new
        state.log_p_tilde = log_pt_new
        state.q = q_new
        if couple_latents:
            if n_imp != 1 or use_approx_marginal:
                raise ValueError("couple_latents requires n_imp == 1 importance draws")
            state.latents = draw
            state.log_lik_f = None
        return state, StepInfo(accepted=True, log_accept=log_accept)
    return state, StepInfo(accepted=False, log_accept=log_accept)


def sa_mh_step(state, model, proposal, rng, ops=None):
    """MH update of theta conditioned on the latent vector f."""
    if state.log_gp is None:
        state.log_gp = gp_log_density(state.latents, state.km)
    hyper_new = _propose_hyper(state, model, proposal, rng)
    try:
        km_new = build_kernel(model.X, hyper_new, model.kind, ops=ops)
    except FactorizationError:
        return state, StepInfo(accepted=False, log_accept=-np.inf, failed=True)
    log_gp_new = gp_log_density(state.latents, km_new)
    log_accept = (log_gp_new + model.log_prior(hyper_new)) - (
        state.log_gp + model.log_prior(state.hyper)
    )
    if _accept(log_accept, rng):
        state.hyper = hyper_new
        state.km = km_new
        state.log_gp = log_gp_new
        return state, StepInfo(accepted=True, log_accept=log_accept)
    return state, StepInfo(accepted=False, log_accept=log_accept)


def aa_mh_step(state, model, proposal, rng, ops=None):
    """MH update of theta conditioned on whitened latents nu = L^-1 f.

    On acceptance the latent vector is re-materialized as L' nu, so f
    moves together with theta while nu stays fixed.
    """
    if state.log_lik_f is None:
        state.log_lik_f = model.loglik_fn(state.latents)
    nu = solve_triangular(state.km.chol, state.latents, lower=True,
                          check_finite=False)
    hyper_new = _propose_hyper(state, model, proposal, rng)
    try:
        km_new = build_kernel(model.X, hyper_new, model.kind, ops=ops)
    except FactorizationError:
        return state, StepInfo(accepted=False, log_accept=-np.inf, failed=True)
    f_new = km_new.chol @ nu
    log_lik_new = model.loglik_fn(f_new)
    log_accept = (log_lik_new + model.log_prior(hyper_new)) - (
        state.log_lik_f + model.log_prior(state.hyper)
    )
    if _accept(log_accept, rng):
        state.hyper = hyper_new
        state.km = km_new
        state.latents = f_new
        state.log_lik_f = log_lik_new
        state.log_gp = None
        return state, StepInfo(accepted=True, log_accept=log_accept)
    return state, StepInfo(accepted=False, log_accept=log_accept)


def approx_site_variances(approx_method, y, km, ops=None):
    """Per-site posterior variances implied by a Gaussian approximation.

    Laplace: reciprocal curvature 1 / W_i at the mode; EP: the converged
    site variances.
    """
    if approx_method == "la":
        q = laplace_approx(y, km, ops=ops)
        w = loglik_neg_hess_diag(y, q.mean)
        return 1.0 / w
    if approx_method == "ep":
        _, sites = ep_approx(y, km, ops=ops)
        return sites.sigma2_tilde.copy()
    raise ValueError(f"unknown approximation method {approx_method!r}")


def _surrogate_parts(km, s, g, ops=None):
    """Conditional pieces of the auxiliary-data construction.

    For S = diag(s) and A = K + S: R = S - S A^-1 S, m = g - s * (A^-1 g),
    D = chol(R), plus log N(g | 0, A).
    """
    n = km.n
    A = km.matrix + np.diag(s)
    LA_, _ = chol_with_jitter(A, float(np.max(np.diag(A))), ops=ops)
    z = solve_triangular(LA_, g, lower=True, check_finite=False)
    log_det_A = 2.0 * float(np.sum(np.log(np.diag(LA_))))
    log_g = -0.5 * float(np.dot(z, z)) - 0.5 * log_det_A - 0.5 * n * _LOG_2PI
    Ainv_g = solve_triangular(LA_, z, lower=True, trans="T", check_finite=False)
    m = g - s * Ainv_g
    W = solve_triangular(LA_, np.diag(s), lower=True, check_finite=False)
    if ops is not None:
        ops.add_matrix_solve()
    Ainv_S = solve_triangular(LA_, W, lower=True, trans="T", check_finite=False)
    R = np.diag(s) - s[:, None] * Ainv_S
    D, _ = chol_with_jitter(R, float(np.max(np.diag(R))), ops=ops)
    return R, m, D, log_g


def surr_mh_step(
    state,
    model,
    proposal,
    rng,
    approx_method="la",
    ops=None,
    site_variance_fn=None,
):
    """MH update of theta under the surrogate-data parameterization.

    A noisy copy g ~ N(f, S_theta) is drawn at entry; theta then moves
    conditioned on the whitened residual eta with f = D eta + m.  On
    acceptance f is re-materialized under the new hyper-parameters.

    ``site_variance_fn(hyper, km)`` overrides the S_theta construction
    (test hook).
    """
    if state.log_lik_f is None:
        state.log_lik_f = model.loglik_fn(state.latents)

    def site_vars(hyper, km):
        if site_variance_fn is not None:
            return site_variance_fn(hyper, km)
        return approx_site_variances(approx_method, model.y, km, ops=ops)

    try:
        if state.site_vars is None:
            state.site_vars = site_vars(state.hyper, state.km)
        s_cur = state.site_vars
    except (FactorizationError, ConvergenceError):
        return state, StepInfo(accepted=False, log_accept=-np.inf, failed=True)
    g = state.latents + np.sqrt(s_cur) * rng.standard_normal(state.latents.shape[0])
    _, m_cur, d_cur, log_g_cur = _surrogate_parts(state.km, s_cur, g, ops=ops)
    eta = solve_triangular(d_cur, state.latents - m_cur, lower=True,
                           check_finite=False)

    hyper_new = _propose_hyper(state, model, proposal, rng)
    try:
        km_new = build_kernel(model.X, hyper_new, model.kind, ops=ops)
        s_new = site_vars(hyper_new, km_new)
        _, m_new, d_new, log_g_new = _surrogate_parts(km_new, s_new, g, ops=ops)
    except (FactorizationError, ConvergenceError):
        return state, StepInfo(accepted=False, log_accept=-np.inf, failed=True)
    f_new = d_new @ eta + m_new
    log_lik_new = model.loglik_fn(f_new)
    log_accept = (log_lik_new + log_g_new + model.log_prior(hyper_new)) - (
        state.log_lik_f + log_g_cur + model.log_prior(state.hyper)
    )
    if _accept(log_accept, rng):
        state.hyper = hyper_new
        state.km = km_new
        state.latents = f_new
        state.log_lik_f = log_lik_new
        state.log_gp = None
        state.site_vars = s_new
        return state, StepInfo(accepted=True, log_accept=log_accept)
    return state, StepInfo(accepted=False, log_accept=log_accept)


def adapt_proposal(accept_flags, proposal, factor):
    """Multiplicative band adaptation of the random-walk scales.

    A window acceptance rate below the band shrinks every step size by
    ``factor``; above the band grows it; inside the band the proposal is
    returned unchanged.
    """
    if factor <= 1.0:
        raise ValueError("adaptation factor must exceed 1")
    rate = float(np.mean(accept_flags)) if len(accept_flags) else proposal.target_acceptance
    if rate < proposal.band_low:
        return replace(proposal, step_sizes=proposal.step_sizes / factor)
    if rate > proposal.band_high:
        return replace(proposal, step_sizes=proposal.step_sizes * factor)
    return proposal


def _adapt_factor(window_index):
    """Adaptation factor schedule: aggressive early, gentle later."""
    return max(1.05, 2.0 * 0.85**window_index)


@dataclass
class GibbsConfig:
    """Sampler-level knobs for one chain."""

    scheme: str = PM
    n_iterations: int = 1000
    burn_in: int = 500
    thinning: int = 1
    latent_repeats: int = 10
    theta_repeats: int = 1
    approx_method: str = "ep"
    n_imp: int = 64
    initial_step: float = 0.4
    target_acceptance: float = 0.25
    band_low: float = 0.20
    band_high: float = 0.30
    adaptation_window: int = 100
    warm_start: bool = True
    sample_latents: bool = True
    latent_stride: int = 10

    def validate(self):
        problems = []
        if self.scheme not in SCHEMES:
            problems.append(f"unknown scheme {self.scheme!r}")
        if self.n_iterations < 0:
            problems.append("n_iterations must be >= 0")
        if self.burn_in < 0:
            problems.append("burn_in must be >= 0")
        if self.thinning < 1:
            problems.append("thinning must be >= 1")
        if self.latent_repeats < 0:
            problems.append("latent_repeats must be >= 0")
        if self.theta_repeats < 1:
            problems.append("theta_repeats must be >= 1")
        if self.n_imp < 1:
            problems.append("n_imp must be >= 1")
        if not 0 < self.target_acceptance < 1:
            problems.append("target_acceptance must be in (0, 1)")
        if self.scheme != PM and not self.sample_latents:
            problems.append(f"scheme {self.scheme!r} requires latent sampling")
        if problems:
            raise ValueError("; ".join(problems))
        return self


@dataclass
class ChainTrace:
    """Per-iteration records of one chain."""

    chain_id: int
    seed: object
    scheme: str
    psi_names: list
    iteration: np.ndarray = None
    psi: np.ndarray = None
    accepted: np.ndarray = None
    log_p_tilde: np.ndarray = None
    phase: list = field(default_factory=list)
    cubic_ops: np.ndarray = None
    samples: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)

    def post_burn_in(self):
        """Rows recorded in the sampling stage."""
        mask = np.array([p.startswith("sample") for p in self.phase])
        return self.psi[mask]

    def acceptance_rate(self, stage="sample"):
        mask = np.array([p.startswith(stage) for p in self.phase])
        if not mask.any():
            return float("nan")
        return float(np.mean(self.accepted[mask]))


def gibbs_run(X, y, priors, config, rng, kind="isotropic", init_hyper=None,
              chain_id=0, seed=None, model=None):
    """Run one chain and return its trace.

    ``rng`` is the chain's private generator.  ``init_hyper`` defaults to
    a draw from the prior; latents start at zero.  ``model`` may carry
    log-prior / log-likelihood overrides (testing); X, y, kind and priors
    are taken from it when given.
    """
    config.validate()
    if model is None:
        model = ChainModel(X=np.asarray(X, float), y=np.asarray(y, float),
                           kind=kind, priors=priors)
    n, d = model.X.shape
    m = 1 if model.kind == "isotropic" else d
    if init_hyper is None:
        init_hyper = sample_hyper_prior(model.priors, rng, m)
    ops = OpCounter()
    km = build_kernel(model.X, init_hyper, model.kind, ops=ops)
    state = ChainState(hyper=init_hyper, latents=np.zeros(n), km=km)
    n_free = free_psi(init_hyper, model.priors).shape[0]
    if n_free == 0:
        raise ValueError("no free hyper-parameters to sample")
    proposal = ProposalConfig(
        step_sizes=np.full(n_free, config.initial_step),
        target_acceptance=config.target_acceptance,
        band_low=config.band_low,
        band_high=config.band_high,
        adaptation_window=config.adaptation_window,
    )
    instrument = {"proposals": 0, "estimates": 0, "failures": 0, "accepts": 0}

    scheme = config.scheme
    pm_marginal_mode = "approx" if (scheme == PM and config.warm_start) else PM
    if scheme == PM:
        q0 = run_approx(config.approx_method, model.y, state.km, ops=ops)
        state.q = q0
        if pm_marginal_mode == "approx":
            state.log_p_tilde = q0.log_approx_marginal
        else:
            est = importance_log_marginal(
                model.y, state.km, q0, config.n_imp, rng, log_lik=model.log_lik
            )
            state.log_p_tilde = est.log_p_tilde
        instrument["estimates"] += 1

    total = config.burn_in + config.n_iterations
    rows_iter, rows_psi, rows_acc, rows_lpt, rows_phase, rows_ops = [], [], [], [], [], []
    samples = []
    window_accepts = []
    window_index = 0

    def theta_step():
        if scheme == PM:
            return pm_mh_step(
                state, model, proposal, config.approx_method, config.n_imp,
                rng, ops=ops,
                use_approx_marginal=(pm_marginal_mode == "approx"),
                instrument=instrument,
            )
        if scheme == SA:
            return sa_mh_step(state, model, proposal, rng, ops=ops)
        if scheme == AA:
            return aa_mh_step(state, model, proposal, rng, ops=ops)
        return surr_mh_step(
            state, model, proposal, rng,
            approx_method=config.approx_method, ops=ops,
        )

    for it in range(total):
        adapting = it < config.burn_in
        if scheme == PM and not adapting and pm_marginal_mode == "approx":
            # One-time switch from the warm-start approximate marginal to
            # the importance-sampling estimate.
            pm_marginal_mode = PM
            q_cur = run_approx(config.approx_method, model.y, state.km, ops=ops)
            state.q = q_cur
            est = importance_log_marginal(
                model.y, state.km, q_cur, config.n_imp, rng, log_lik=model.log_lik
            )
            state.log_p_tilde = est.log_p_tilde
            instrument["estimates"] += 1
        ops_before = ops.total
        n_acc = 0
        for _ in range(config.theta_repeats):
            state, info = theta_step()
            n_acc += int(info.accepted)
            instrument["accepts"] += int(info.accepted)
            instrument["failures"] += int(info.failed)
            if adapting:
                window_accepts.append(int(info.accepted))
        if config.sample_latents and config.latent_repeats > 0:
            ll = state.log_lik_f
            for _ in range(config.latent_repeats):
                state.latents, ll = elliptical_slice(
                    state.latents, state.km.chol, model.loglik_fn, rng, cur_log_lik=ll
                )
            state.log_lik_f = ll
            state.log_gp = None
        if adapting and len(window_accepts) >= proposal.adaptation_window:
            proposal = adapt_proposal(
                window_accepts, proposal, _adapt_factor(window_index)
            )
            window_accepts = []
            window_index += 1
        stage = "adapt" if adapting else "sample"
        phase = f"{stage}:{pm_marginal_mode}" if scheme == PM else stage
        if it % config.thinning == 0:
            rows_iter.append(it)
            rows_psi.append(free_psi(state.hyper, model.priors))
            rows_acc.append(n_acc / config.theta_repeats)
            rows_lpt.append(state.log_p_tilde if scheme == PM else np.nan)
            rows_phase.append(phase)
            rows_ops.append(ops.total - ops_before)
        if (
            not adapting
            and config.sample_latents
            and (it - config.burn_in) % config.latent_stride == 0
        ):
            samples.append((state.hyper, state.latents.copy()))

    names = psi_names(m, model.priors)
    return ChainTrace(
        chain_id=chain_id,
        seed=seed,
        scheme=scheme,
        psi_names=names,
        iteration=np.asarray(rows_iter, dtype=int),
        psi=np.asarray(rows_psi, dtype=float).reshape(len(rows_iter), n_free),
        accepted=np.asarray(rows_acc, dtype=float),
        log_p_tilde=np.asarray(rows_lpt, dtype=float),
        phase=rows_phase,
        cubic_ops=np.asarray(rows_ops, dtype=int),
        samples=samples,
        counters=dict(instrument),
    )


def spawn_rngs(master_seed, n_chains):
    """Per-chain generators via SeedSequence spawning (documented rule:
    SeedSequence(master).spawn(n_chains), one child per chain in order)."""
    seq = np.random.SeedSequence(master_seed)
    children = seq.spawn(n_chains)
    return [np.random.Generator(np.random.PCG64(c)) for c in children], children


def run_chains(X, y, priors, config, master_seed=None, n_chains=None,
               kind="isotropic", init_hyper=None, model=None, seeds=None):
    """Run independent chains.

    Streams come either from explicit per-chain ``seeds`` or by spawning
    ``n_chains`` children off ``master_seed``.
    """
    if seeds is None:
        if master_seed is None or n_chains is None:
            raise ValueError("give either seeds or (master_seed, n_chains)")
        children = np.random.SeedSequence(master_seed).spawn(n_chains)
        seeds = [int(c.generate_state(1)[0]) for c in children]
    traces = []
    for i, seed in enumerate(seeds):
        rng = np.random.Generator(np.random.PCG64(seed))
        traces.append(
            gibbs_run(
                X, y, priors, config, rng, kind=kind, init_hyper=init_hyper,
                chain_id=i, seed=int(seed), model=model,
            )
        )
    return traces
