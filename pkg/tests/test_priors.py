import math

import numpy as np
import pytest

from pmgp.kernels import Hyperparams
from pmgp.priors import (
    GammaPrior,
    HyperPriors,
    default_lengthscale_prior,
    free_psi,
    gamma_log_pdf,
    hyper_from_psi,
    log_prior_hyper,
    psi_names,
    sample_hyper_prior,
)


def _hand_gamma_logpdf(x, a, b):
    return a * math.log(b) - math.lgamma(a) + (a - 1) * math.log(x) - b * x


class TestGammaLogPdf:
    def test_unit_exponential(self):
        assert gamma_log_pdf(1.0, GammaPrior(1.0, 1.0)) == pytest.approx(-1.0, abs=1e-12)

    def test_matches_hand_formula(self):
        val = gamma_log_pdf(1.0, GammaPrior(1.2, 0.2))
        assert val == pytest.approx(_hand_gamma_logpdf(1.0, 1.2, 0.2), abs=1e-10)

    def test_random_points_match_hand_formula(self, rng):
        for _ in range(25):
            a, b = rng.uniform(0.5, 3.0), rng.uniform(0.1, 2.0)
            x = rng.uniform(0.01, 10.0)
            assert gamma_log_pdf(x, GammaPrior(a, b)) == pytest.approx(
                _hand_gamma_logpdf(x, a, b), abs=1e-10
            )

    def test_domain_error(self):
        with pytest.raises(ValueError):
            gamma_log_pdf(0.0, GammaPrior(1.0, 1.0))
        with pytest.raises(ValueError):
            gamma_log_pdf(-1.0, GammaPrior(1.0, 1.0))

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            GammaPrior(0.0, 1.0)
        with pytest.raises(ValueError):
            GammaPrior(1.0, -1.0)

    def test_density_integrates_to_one(self):
        prior = GammaPrior(1.2, 0.2)
        x = np.linspace(1e-9, 400.0, 400_001)
        dens = np.exp(gamma_log_pdf(x, prior))
        assert np.trapezoid(dens, x) == pytest.approx(1.0, abs=1e-4)

    def test_default_lengthscale_rate(self):
        assert default_lengthscale_prior(4).rate == pytest.approx(0.5)
        assert default_lengthscale_prior(4).shape == 1.0


class TestLogPriorHyper:
    def test_jacobian_corrected_density_normalizes(self):
        # 1-d case: sigma fixed, integrate exp(log prior) over psi_tau.
        priors = HyperPriors(tau=GammaPrior(1.0, 1.0), fix_sigma=True)
        psi = np.linspace(-30.0, 8.0, 200_001)
        vals = np.array(
            [
                log_prior_hyper(Hyperparams(0.0, [p]), priors)
                for p in psi[:: len(psi) // 2000]
            ]
        )
        # Fine grid via vectorized formula for speed: density of log-Gamma.
        dens = np.exp(gamma_log_pdf(np.exp(psi), GammaPrior(1.0, 1.0)) + psi)
        assert np.trapezoid(dens, psi) == pytest.approx(1.0, abs=1e-4)
        # Spot check the function agrees with the vectorized formula.
        sub = np.exp(psi[:: len(psi) // 2000][: len(vals)])
        expected = gamma_log_pdf(sub, GammaPrior(1.0, 1.0)) + np.log(sub)
        assert np.allclose(vals, expected, atol=1e-10)

    def test_jacobian_flag(self):
        priors = HyperPriors(fix_sigma=True)
        h = Hyperparams(0.0, [0.7])
        with_j = log_prior_hyper(h, priors)
        without = log_prior_hyper(h, priors, include_jacobian=False)
        assert with_j - without == pytest.approx(0.7, abs=1e-12)

    def test_fixed_parameters_excluded(self):
        h = Hyperparams(np.log(2.0), [np.log(0.5)])
        free = log_prior_hyper(h, HyperPriors())
        no_sigma = log_prior_hyper(h, HyperPriors(fix_sigma=True))
        sigma_part = gamma_log_pdf(2.0, HyperPriors().sigma) + np.log(2.0)
        assert free - no_sigma == pytest.approx(sigma_part, abs=1e-12)


class TestPsiPacking:
    def test_round_trip(self):
        h = Hyperparams(0.3, [-0.1, 0.4])
        priors = HyperPriors()
        psi = free_psi(h, priors)
        assert psi.shape == (3,)
        back = hyper_from_psi(psi, h, priors)
        assert back.log_sigma == h.log_sigma
        assert np.array_equal(back.log_lengthscales, h.log_lengthscales)

    def test_fixed_sigma_packing(self):
        h = Hyperparams(0.3, [-0.1])
        priors = HyperPriors(fix_sigma=True)
        psi = free_psi(h, priors)
        assert psi.shape == (1,)
        back = hyper_from_psi(np.array([9.0]), h, priors)
        assert back.log_sigma == 0.3
        assert back.log_lengthscales[0] == 9.0

    def test_names(self):
        assert psi_names(1, HyperPriors()) == ["psi_sigma", "psi_tau"]
        assert psi_names(3, HyperPriors(fix_sigma=True)) == [
            "psi_tau1", "psi_tau2", "psi_tau3",
        ]

    def test_sample_prior_respects_mask(self, rng):
        base = Hyperparams(np.log(2.08), [np.log(0.35)])
        priors = HyperPriors(fix_sigma=True)
        h = sample_hyper_prior(priors, rng, 1, base=base)
        assert h.log_sigma == base.log_sigma
        assert h.log_lengthscales[0] != base.log_lengthscales[0]

    def test_sample_prior_requires_base_when_fixed(self, rng):
        with pytest.raises(ValueError):
            sample_hyper_prior(HyperPriors(fix_sigma=True), rng, 1)

    def test_sampled_prior_matches_distribution(self, rng):
        from scipy.stats import kstest, gamma as gamma_dist

        priors = HyperPriors(sigma=GammaPrior(1.2, 0.2), tau=GammaPrior(1.0, 1.0))
        draws = np.array(
            [sample_hyper_prior(priors, rng, 1).sigma for _ in range(4000)]
        )
        assert kstest(draws, gamma_dist(a=1.2, scale=5.0).cdf).pvalue > 0.01
