import copy

import numpy as np
import pytest
from scipy.stats import chisquare, gamma as gamma_dist, kstest

from pmgp.approx import run_approx
from pmgp.datasets import draw_labels
from pmgp.kernels import Hyperparams, build_kernel, gp_log_density, sample_gp_prior
from pmgp.likelihoods import log_likelihood
from pmgp.priors import GammaPrior, HyperPriors, free_psi, gamma_log_pdf
from pmgp.samplers import (
    ChainModel,
    ChainState,
    GibbsConfig,
    ProposalConfig,
    _surrogate_parts,
    aa_mh_step,
    adapt_proposal,
    elliptical_slice,
    gibbs_run,
    pm_mh_step,
    run_chains,
    sa_mh_step,
    surr_mh_step,
)


class _StubRng:
    """Deterministic stand-in: zero normal increments, programmable uniforms."""

    def __init__(self, uniform_value=1.0):
        self.uniform_value = uniform_value

    def standard_normal(self, size=None):
        return np.zeros(size) if size is not None else 0.0

    def uniform(self, low=0.0, high=1.0, size=None):
        if size is not None:
            return np.full(size, self.uniform_value)
        return self.uniform_value


def _setup(rng, n=8, d=2, sigma=2.08, tau=0.5):
    X = rng.uniform(size=(n, d))
    hyper = Hyperparams.from_values(sigma, [tau])
    km = build_kernel(X, hyper)
    f = sample_gp_prior(km, rng)
    y = draw_labels(f, rng)
    priors = HyperPriors(tau=GammaPrior(1.0, 1.0 / np.sqrt(d)))
    model = ChainModel(X=X, y=y, kind="isotropic", priors=priors)
    return model, ChainState(hyper=hyper, latents=f, km=km)


class TestEllipticalSlice:
    def test_preserves_gaussian_prior_under_constant_likelihood(self):
        rng = np.random.default_rng(5)
        X = np.array([[0.0], [0.05], [0.4]])
        km = build_kernel(X, Hyperparams.from_values(1.0, [0.3]))
        f = sample_gp_prior(km, rng)
        const = lambda _f: 0.0
        kept = []
        for i in range(50_000):
            f, _ = elliptical_slice(f, km.chol, const, rng, cur_log_lik=0.0)
            if i % 5 == 0:
                kept.append(f.copy())
        kept = np.asarray(kept)
        for j in range(3):
            sd = np.sqrt(km.matrix[j, j])
            assert kstest(kept[:, j] / sd, "norm").pvalue > 0.01

    def test_matches_conjugate_posterior(self):
        # Gaussian pseudo-likelihood N(y_obs | f, v I) has a closed form.
        rng = np.random.default_rng(11)
        X = rng.uniform(size=(4, 1))
        km = build_kernel(X, Hyperparams.from_values(1.5, [0.4]))
        v = 0.5
        y_obs = np.array([1.0, -0.5, 0.3, 2.0])
        loglik = lambda f: float(-0.5 * np.sum((y_obs - f) ** 2) / v)
        K = km.matrix + km.jitter * np.eye(4)
        post_mean = K @ np.linalg.solve(K + v * np.eye(4), y_obs)
        f = np.zeros(4)
        ll = loglik(f)
        kept = []
        for i in range(40_000):
            f, ll = elliptical_slice(f, km.chol, loglik, rng, cur_log_lik=ll)
            if i >= 1000 and i % 4 == 0:
                kept.append(f.copy())
        kept = np.asarray(kept)
        from pmgp.diagnostics import effective_sample_size

        for j in range(4):
            ess = effective_sample_size(kept[:, j])
            se = kept[:, j].std(ddof=1) / np.sqrt(ess)
            assert abs(kept[:, j].mean() - post_mean[j]) < 2.5 * se

    def test_moves_with_probability_one(self, rng):
        model, state = _setup(rng)
        f = state.latents
        for _ in range(100):
            f_new, _ = elliptical_slice(f, state.km.chol, model.loglik_fn, rng)
            assert not np.array_equal(f_new, f)
            f = f_new


class TestPMStep:
    def test_forced_rejection_leaves_state_bitwise_equal(self, rng):
        model, state = _setup(rng)
        q = run_approx("la", model.y, state.km)
        state.q = q
        state.log_p_tilde = -12.5
        before = copy.deepcopy(state)
        proposal = ProposalConfig(step_sizes=np.array([0.5, 0.5]))
        out, info = pm_mh_step(state, model, proposal, "la", 4, _StubRng(1.0))
        assert not info.accepted
        assert out is state
        assert out.log_p_tilde == before.log_p_tilde
        assert np.array_equal(out.latents, before.latents)
        assert out.hyper.log_sigma == before.hyper.log_sigma
        assert np.array_equal(out.km.matrix, before.km.matrix)

    def test_unit_hastings_ratio_accepts_with_probability_one(self, rng):
        model, state = _setup(rng)
        flat_model = ChainModel(
            X=model.X, y=model.y, kind="isotropic", priors=model.priors,
            log_prior=lambda h: 0.0, log_lik=lambda f: -2.0,
        )
        state.q = run_approx("prior", flat_model.y, state.km)
        state.log_p_tilde = -2.0  # the zero-variance estimate
        proposal = ProposalConfig(step_sizes=np.array([1e-9, 1e-9]))
        out, info = pm_mh_step(
            state, flat_model, proposal, "prior", 8, _StubRng(1.0 - 1e-12)
        )
        assert info.log_accept == 0.0
        assert info.accepted

    def test_caching_discipline(self, rng):
        model, state = _setup(rng, n=10)
        cfg = GibbsConfig(
            scheme="pm", n_iterations=40, burn_in=0, approx_method="la",
            n_imp=2, warm_start=False, sample_latents=False, latent_repeats=0,
        )
        trace = gibbs_run(
            model.X, model.y, model.priors, cfg, np.random.default_rng(1)
        )
        # One estimate per proposal plus the initial one: the incumbent's
        # value is never recomputed.
        assert trace.counters["estimates"] == trace.counters["proposals"] + 1

    def test_coupled_mode_requires_single_draw(self, rng):
        model, state = _setup(rng)
        state.q = run_approx("la", model.y, state.km)
        state.log_p_tilde = 0.0
        proposal = ProposalConfig(step_sizes=np.array([0.3, 0.3]))
        with pytest.raises(ValueError):
            # force acceptance path by a huge ratio via flat prior etc. is
            # unnecessary: the check fires on any accepted proposal; use a
            # stub that always accepts.
            for _ in range(50):
                pm_mh_step(state, model, proposal, "la", 4, rng,
                           couple_latents=True)


class TestSAStep:
    def test_rejection_leaves_state_unchanged(self, rng):
        model, state = _setup(rng)
        before = copy.deepcopy(state)
        proposal = ProposalConfig(step_sizes=np.array([0.5, 0.5]))
        out, info = sa_mh_step(state, model, proposal, _StubRng(1.0))
        assert not info.accepted
        assert np.array_equal(out.latents, before.latents)
        assert out.hyper.log_sigma == before.hyper.log_sigma

    def test_grid_chi_square_against_conditional_density(self):
        rng = np.random.default_rng(17)
        X = rng.uniform(size=(10, 2))
        sigma = 2.0
        priors = HyperPriors(
            tau=GammaPrior(1.0, 1.0 / np.sqrt(2)), fix_sigma=True
        )
        hyper0 = Hyperparams.from_values(sigma, [0.5])
        km0 = build_kernel(X, hyper0)
        f = sample_gp_prior(rng=rng, km=km0)
        y = draw_labels(f, rng)
        model = ChainModel(X=X, y=y, kind="isotropic", priors=priors)
        state = ChainState(hyper=hyper0, latents=f, km=km0)
        proposal = ProposalConfig(step_sizes=np.array([1.6]))
        kept = []
        for i in range(40_000):
            state, _ = sa_mh_step(state, model, proposal, rng)
            if i >= 2000 and i % 19 == 0:
                kept.append(state.hyper.log_lengthscales[0])
        kept = np.asarray(kept)

        # Exact conditional density over a psi grid.
        psi_grid = np.linspace(kept.min() - 1.5, kept.max() + 1.5, 400)
        log_dens = np.array(
            [
                gp_log_density(f, build_kernel(X, Hyperparams(np.log(sigma), [p]), "isotropic"))
                + gamma_log_pdf(np.exp(p), priors.tau) + p
                for p in psi_grid
            ]
        )
        dens = np.exp(log_dens - log_dens.max())
        cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) / 2 * np.diff(psi_grid))])
        cdf /= cdf[-1]
        edges = np.quantile(kept, np.linspace(0.0, 1.0, 13))
        edges[0], edges[-1] = psi_grid[0], psi_grid[-1]
        probs = np.diff(np.interp(edges, psi_grid, cdf))
        counts = np.histogram(kept, bins=edges)[0]
        probs = probs / probs.sum()
        assert chisquare(counts, probs * counts.sum()).pvalue > 0.01


class TestAAStep:
    def test_rejection_leaves_state_unchanged(self, rng):
        model, state = _setup(rng)
        before = copy.deepcopy(state)
        proposal = ProposalConfig(step_sizes=np.array([0.5, 0.5]))
        out, info = aa_mh_step(state, model, proposal, _StubRng(1.0))
        assert not info.accepted
        assert np.array_equal(out.latents, before.latents)
        assert np.array_equal(out.km.matrix, before.km.matrix)

    def test_acceptance_moves_latents_with_theta(self, rng):
        model, state = _setup(rng)
        proposal = ProposalConfig(step_sizes=np.array([0.3, 0.3]))
        f_before = state.latents.copy()
        for _ in range(200):
            state, info = aa_mh_step(state, model, proposal, rng)
            if info.accepted:
                assert not np.array_equal(state.latents, f_before)
                break
        else:
            pytest.fail("no acceptance in 200 proposals")

    def test_prior_recovery_with_flat_likelihood(self):
        rng = np.random.default_rng(23)
        X = rng.uniform(size=(6, 2))
        priors = HyperPriors(tau=GammaPrior(1.0, 1.0), fix_sigma=True)
        hyper0 = Hyperparams.from_values(1.0, [0.8])
        km0 = build_kernel(X, hyper0)
        model = ChainModel(
            X=X, y=np.ones(6), kind="isotropic", priors=priors,
            log_lik=lambda f: 0.0,
        )
        state = ChainState(hyper=hyper0, latents=sample_gp_prior(km0, rng), km=km0)
        proposal = ProposalConfig(step_sizes=np.array([2.2]))
        kept = []
        for i in range(30_000):
            state, _ = aa_mh_step(state, model, proposal, rng)
            if i >= 1000 and i % 15 == 0:
                kept.append(np.exp(state.hyper.log_lengthscales[0]))
        assert kstest(np.asarray(kept), gamma_dist(a=1.0, scale=1.0).cdf).pvalue > 0.01


class TestSurrStep:
    def test_rejection_leaves_state_unchanged(self, rng):
        model, state = _setup(rng)
        before = copy.deepcopy(state)
        proposal = ProposalConfig(step_sizes=np.array([0.5, 0.5]))
        out, info = surr_mh_step(state, model, proposal, _StubRng(1.0))
        assert not info.accepted
        assert np.array_equal(out.latents, before.latents)

    def test_huge_site_variance_degenerates_to_prior_conditional(self, rng):
        model, state = _setup(rng, n=6)
        s = np.full(6, 1e8)
        g = state.latents + np.sqrt(s) * rng.standard_normal(6)
        R, m, D, _ = _surrogate_parts(state.km, s, g)
        K = state.km.matrix
        assert np.max(np.abs(R - K)) / np.max(np.abs(K)) < 1e-3
        assert np.max(np.abs(m)) < 1e-3 * np.sqrt(s[0])

    def test_site_variance_hook(self, rng):
        model, state = _setup(rng)
        proposal = ProposalConfig(step_sizes=np.array([0.4, 0.4]))
        calls = []

        def site_fn(hyper, km):
            calls.append(hyper)
            return np.full(km.n, 2.0)

        surr_mh_step(state, model, proposal, rng, site_variance_fn=site_fn)
        assert len(calls) == 2  # incumbent and proposal


class TestAdaptation:
    def test_inside_band_unchanged(self):
        prop = ProposalConfig(step_sizes=np.array([0.4]))
        out = adapt_proposal([1] * 25 + [0] * 75, prop, factor=1.5)
        assert out is prop

    def test_all_reject_shrinks(self):
        prop = ProposalConfig(step_sizes=np.array([0.4, 0.8]))
        out = adapt_proposal([0] * 100, prop, factor=1.5)
        assert np.all(out.step_sizes < prop.step_sizes)

    def test_all_accept_grows(self):
        prop = ProposalConfig(step_sizes=np.array([0.4]))
        out = adapt_proposal([1] * 100, prop, factor=2.0)
        assert out.step_sizes[0] == pytest.approx(0.8)


class TestGibbsRun:
    def test_zero_iterations_empty_trace(self, rng):
        model, _ = _setup(rng)
        cfg = GibbsConfig(scheme="pm", n_iterations=0, burn_in=0,
                          approx_method="la", n_imp=1)
        trace = gibbs_run(model.X, model.y, model.priors, cfg,
                          np.random.default_rng(0))
        assert trace.iteration.shape == (0,)
        assert trace.psi.shape == (0, 2)
        assert trace.psi_names == ["psi_sigma", "psi_tau"]

    def test_deterministic_given_seed(self, rng):
        model, _ = _setup(rng, n=10)
        cfg = GibbsConfig(scheme="aa", n_iterations=30, burn_in=10,
                          latent_repeats=2)
        t1 = run_chains(model.X, model.y, model.priors, cfg, seeds=[7, 8])
        t2 = run_chains(model.X, model.y, model.priors, cfg, seeds=[7, 8])
        for a, b in zip(t1, t2):
            assert np.array_equal(a.psi, b.psi)
            assert np.array_equal(a.accepted, b.accepted)

    def test_warm_start_phase_tags(self, rng):
        model, _ = _setup(rng, n=8)
        cfg = GibbsConfig(scheme="pm", n_iterations=10, burn_in=10,
                          approx_method="la", n_imp=2, warm_start=True,
                          sample_latents=False, latent_repeats=0)
        trace = gibbs_run(model.X, model.y, model.priors, cfg,
                          np.random.default_rng(3))
        adapt_phases = [p for p in trace.phase if p.startswith("adapt")]
        sample_phases = [p for p in trace.phase if p.startswith("sample")]
        assert all(p == "adapt:approx" for p in adapt_phases)
        assert all(p == "sample:pm" for p in sample_phases)
        assert np.all(np.isfinite(trace.log_p_tilde))

    def test_latent_snapshots_post_burn_in_only(self, rng):
        model, _ = _setup(rng, n=8)
        cfg = GibbsConfig(scheme="aa", n_iterations=20, burn_in=10,
                          latent_repeats=1, latent_stride=5)
        trace = gibbs_run(model.X, model.y, model.priors, cfg,
                          np.random.default_rng(4))
        assert len(trace.samples) == 4

    def test_cubic_ops_recorded(self, rng):
        model, _ = _setup(rng, n=8)
        cfg = GibbsConfig(scheme="aa", n_iterations=10, burn_in=0,
                          latent_repeats=0)
        trace = gibbs_run(model.X, model.y, model.priors, cfg,
                          np.random.default_rng(4))
        # AA builds exactly one kernel factorization per proposal.
        assert np.all(trace.cubic_ops == 1)

    def test_validation(self, rng):
        model, _ = _setup(rng)
        with pytest.raises(ValueError):
            GibbsConfig(scheme="nope").validate()
        with pytest.raises(ValueError):
            GibbsConfig(scheme="sa", sample_latents=False).validate()

    @pytest.mark.slow
    def test_cross_sampler_posterior_agreement(self):
        from pmgp.diagnostics import effective_sample_size

        rng = np.random.default_rng(99)
        X = rng.uniform(size=(20, 1))
        hyper = Hyperparams.from_values(2.08, [0.35])
        km = build_kernel(X, hyper)
        f = sample_gp_prior(km, rng)
        y = draw_labels(f, rng)
        priors = HyperPriors(tau=GammaPrior(1.0, 1.0), fix_sigma=True)
        base = Hyperparams.from_values(2.08, [1.0])

        results = {}
        for scheme in ("pm", "sa", "aa", "surr"):
            cfg = GibbsConfig(
                scheme=scheme, n_iterations=4000, burn_in=800,
                approx_method="la", n_imp=16, latent_repeats=5,
                warm_start=False, initial_step=1.0,
            )
            trace = gibbs_run(
                X, y, priors, cfg, np.random.default_rng(hash(scheme) % 2**31),
                init_hyper=base,
            )
            post = trace.post_burn_in()[:, 0]
            ess = effective_sample_size(post)
            results[scheme] = (post.mean(), post.std(ddof=1) / np.sqrt(ess))
        schemes = list(results)
        for i in range(len(schemes)):
            for j in range(i + 1, len(schemes)):
                ma, sa_ = results[schemes[i]]
                mb, sb = results[schemes[j]]
                tol = 3.5 * np.hypot(sa_, sb)
                assert abs(ma - mb) < tol, (schemes[i], schemes[j], ma, mb, tol)
