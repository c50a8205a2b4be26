import numpy as np
import pytest

from pmgp.kernels import (
    FactorizationError,
    Hyperparams,
    OpCounter,
    build_kernel,
    chol_with_jitter,
    gp_log_density,
    kernel_eval,
    kernel_matrix,
    sample_gp_prior,
)

from oracles import dense_gaussian_log_density


class TestKernelEval:
    def test_zero_distance_gives_amplitude(self):
        hyper = Hyperparams.from_values(2.08, [0.35])
        x = np.array([0.3, 0.7])
        assert kernel_eval(x, x, hyper) == pytest.approx(2.08, abs=1e-12)

    def test_unit_case(self):
        hyper = Hyperparams.from_values(1.0, [1.0])
        xi = np.array([0.0, 0.0])
        xj = np.array([1.0, 1.0])  # squared distance 2
        assert kernel_eval(xi, xj, hyper) == pytest.approx(np.exp(-1.0), rel=1e-12)

    def test_symmetry_random_pairs(self, rng):
        hyper = Hyperparams.from_values(1.7, [0.4, 0.9, 1.3])
        for _ in range(100):
            xi, xj = rng.normal(size=3), rng.normal(size=3)
            assert kernel_eval(xi, xj, hyper, "ard") == kernel_eval(xj, xi, hyper, "ard")

    def test_dimension_mismatch(self):
        hyper = Hyperparams.from_values(1.0, [1.0])
        with pytest.raises(ValueError):
            kernel_eval(np.zeros(2), np.zeros(3), hyper)

    def test_ard_requires_full_lengthscales(self):
        hyper = Hyperparams.from_values(1.0, [1.0])
        with pytest.raises(ValueError):
            kernel_eval(np.zeros(2), np.zeros(2), hyper, "ard")

    def test_bounded_by_amplitude(self, rng):
        hyper = Hyperparams.from_values(3.0, [0.5])
        for _ in range(50):
            v = kernel_eval(rng.normal(size=2), rng.normal(size=2), hyper)
            assert 0.0 < v <= 3.0


class TestBuildKernel:
    def test_single_point(self):
        hyper = Hyperparams.from_values(2.08, [0.35])
        km = build_kernel(np.array([[0.1, 0.2]]), hyper)
        assert km.matrix.shape == (1, 1)
        assert km.matrix[0, 0] == pytest.approx(2.08)
        assert km.chol[0, 0] == pytest.approx(np.sqrt(2.08))
        assert km.log_det == pytest.approx(np.log(2.08))
        assert km.jitter == 0.0

    def test_duplicated_rows_need_jitter(self):
        hyper = Hyperparams.from_values(1.0, [1.0])
        X = np.array([[0.5, 0.5]] * 4)
        km = build_kernel(X, hyper)
        assert km.jitter > 0.0
        recon = km.chol @ km.chol.T
        target = km.matrix + km.jitter * np.eye(4)
        assert np.max(np.abs(recon - target)) <= 1e-8 * np.max(np.abs(km.matrix))

    def test_reconstruction_tolerance(self, rng):
        hyper = Hyperparams.from_values(2.0, [0.6])
        X = rng.uniform(size=(5, 3))
        km = build_kernel(X, hyper)
        recon = km.chol @ km.chol.T
        target = km.matrix + km.jitter * np.eye(5)
        assert np.max(np.abs(recon - target)) <= 1e-8 * np.max(np.abs(km.matrix))

    def test_exact_symmetry_and_diagonal(self, rng):
        hyper = Hyperparams.from_values(1.3, [0.25, 0.75])
        X = rng.uniform(size=(20, 2))
        K = kernel_matrix(X, hyper, "ard")
        assert np.array_equal(K, K.T)
        assert np.allclose(np.diag(K), 1.3, atol=1e-14)
        off = K[~np.eye(20, dtype=bool)]
        assert np.all(off < 1.3)

    def test_non_pd_error_carries_jitter(self):
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalue -1
        with pytest.raises(FactorizationError) as err:
            chol_with_jitter(bad, 1.0)
        assert err.value.attempted_jitter == pytest.approx(1e-4)

    def test_counts_factorization(self, rng):
        ops = OpCounter()
        hyper = Hyperparams.from_values(1.0, [1.0])
        build_kernel(rng.uniform(size=(4, 1)), hyper, ops=ops)
        assert ops.factorizations == 1


class TestGpLogDensity:
    def _identity_km(self, n):
        X = np.arange(n, dtype=float)[:, None] * 100.0  # far apart: K ~ sigma I
        hyper = Hyperparams.from_values(1.0, [1e-3])
        return build_kernel(X, hyper)

    def test_standard_normal_origin(self):
        km = self._identity_km(2)
        assert gp_log_density(np.zeros(2), km) == pytest.approx(-np.log(2 * np.pi), abs=1e-10)

    def test_unit_gaussian(self):
        km = self._identity_km(2)
        val = gp_log_density(np.array([1.0, 0.0]), km)
        assert val == pytest.approx(-0.5 - np.log(2 * np.pi), abs=1e-10)

    def test_matches_dense_inverse(self, rng):
        hyper = Hyperparams.from_values(1.9, [0.7])
        X = rng.uniform(size=(4, 2))
        km = build_kernel(X, hyper)
        f = rng.normal(size=4)
        expected = dense_gaussian_log_density(f, km.matrix + km.jitter * np.eye(4))
        assert gp_log_density(f, km) == pytest.approx(expected, abs=1e-10)

    def test_quadratic_part_constant(self, rng):
        hyper = Hyperparams.from_values(1.2, [0.3])
        X = np.linspace(0.0, 5.0, 6)[:, None]  # well separated, mild conditioning
        km = build_kernel(X, hyper)
        Kinv = np.linalg.inv(km.matrix + km.jitter * np.eye(6))
        vals = []
        for _ in range(10):
            f = rng.normal(size=6) * 3
            vals.append(gp_log_density(f, km) + 0.5 * f @ Kinv @ f)
        assert np.ptp(vals) < 1e-8


class _ZeroRng:
    def standard_normal(self, size=None):
        return np.zeros(size) if size is not None else 0.0


class TestSampleGpPrior:
    def test_zero_noise_gives_zero(self, rng):
        hyper = Hyperparams.from_values(1.0, [1.0])
        km = build_kernel(rng.uniform(size=(5, 1)), hyper)
        assert np.array_equal(sample_gp_prior(km, _ZeroRng()), np.zeros(5))

    def test_identity_marginals_standard_normal(self, rng):
        from scipy.stats import kstest

        X = np.arange(3, dtype=float)[:, None] * 100.0
        hyper = Hyperparams.from_values(1.0, [1e-3])
        km = build_kernel(X, hyper)
        draws = np.array([sample_gp_prior(km, rng) for _ in range(10_000)])
        for j in range(3):
            assert kstest(draws[:, j], "norm").pvalue > 0.01

    def test_correlated_pair(self, rng):
        X = np.array([[0.0], [0.1]])
        hyper = Hyperparams.from_values(1.0, [0.3])
        km = build_kernel(X, hyper)
        nu = rng.standard_normal((100_000, 2))
        draws = nu @ km.chol.T
        corr = np.corrcoef(draws[:, 0], draws[:, 1])[0, 1]
        assert corr == pytest.approx(km.matrix[0, 1] / 1.0, abs=0.05)
