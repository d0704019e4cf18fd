import math

import numpy as np
import pytest
import scipy.special as sp

import bglgm.bessel as bessel
from bglgm.bessel import bessel_k
from bglgm.covariance import (
    CovarianceModel,
    build_covariance_matrix,
    cholesky_lower,
    chol_inverse,
    conditional_field_draw,
    matern_correlation,
    pairwise_distances,
    unconditional_field_draw,
)
from bglgm.errors import SingularMatrixError


class TestBesselK:
    def test_against_scipy_grid(self):
        for nu in (0.3, 0.9, 1.0, 1.5, 2.0, 2.2, 2.5, 3.0, 3.7):
            x = np.geomspace(1e-3, 60.0, 80)
            mine = bessel_k(nu, x)
            ref = sp.kv(nu, x)
            np.testing.assert_allclose(mine, ref, rtol=1e-6)

    def test_near_integer_orders(self):
        for nu in (2.9999999999, 1.0000000001, 3.0001, 0.0001):
            x = np.geomspace(1e-2, 40.0, 30)
            np.testing.assert_allclose(bessel_k(nu, x), sp.kv(nu, x), rtol=1e-4)

    def test_series_path_matches_half_integer_closed_form(self):
        # the generic series machinery, checked against the exact closed form
        for x in np.linspace(0.05, 8.0, 40):
            exact = math.sqrt(math.pi / (2 * x)) * math.exp(-x) * (1 + 1 / x)
            assert bessel._scalar_k(1.5, x) == pytest.approx(exact, rel=1e-9)

    def test_symmetry_in_order(self):
        assert bessel_k(-1.2, 3.0) == bessel_k(1.2, 3.0)

    def test_zero_argument_diverges(self):
        assert bessel_k(1.5, 0.0) == math.inf

    def test_monotone_decreasing_in_x(self):
        x = np.linspace(0.1, 20, 200)
        vals = bessel_k(2.2, x)
        assert np.all(np.diff(vals) < 0)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            bessel_k(1.5, -1.0)
        with pytest.raises(ValueError):
            bessel_k(1.5, float("nan"))


class TestMaternCorrelation:
    def test_zero_distance(self):
        assert matern_correlation(0.0, 2.0, 1.5) == 1.0

    def test_exponential_special_case(self):
        # kappa = 1/2 reduces to exp(-h/phi)
        assert matern_correlation(3.0, 3.0, 0.5) == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_kappa_three_halves_closed_form(self):
        assert matern_correlation(3.0, 3.0, 1.5) == pytest.approx(2 * math.exp(-1.0), abs=1e-12)

    def test_closed_forms_dense_grid(self):
        u = np.geomspace(1e-6, 30.0, 100)
        forms = {
            0.5: np.exp(-u),
            1.5: (1 + u) * np.exp(-u),
            2.5: (1 + u + u * u / 3) * np.exp(-u),
        }
        for kappa, expected in forms.items():
            got = matern_correlation(u, 1.0, kappa)
            assert np.max(np.abs(got - expected)) < 1e-10

    def test_generic_kappa_against_direct_formula(self):
        kappa = 1.8
        u = np.geomspace(1e-3, 10, 50)
        expected = (u ** kappa) * sp.kv(kappa, u) / (2 ** (kappa - 1) * math.gamma(kappa))
        got = matern_correlation(u, 1.0, kappa)
        np.testing.assert_allclose(got, expected, rtol=1e-6)

    def test_monotone_and_bounded(self):
        h = np.linspace(0.0, 50.0, 500)
        for kappa in (0.5, 1.5, 2.5, 1.1):
            rho = matern_correlation(h, 4.0, kappa)
            assert np.all(rho > 0)
            assert np.all(rho <= 1.0)
            assert np.all(np.diff(rho) < 0)

    def test_continuity_at_zero(self):
        assert matern_correlation(1e-13, 1.0, 1.5) == pytest.approx(1.0, abs=1e-10)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            matern_correlation(float("inf"), 1.0, 1.5)
        with pytest.raises(ValueError):
            matern_correlation(1.0, -1.0, 1.5)


class TestCovarianceModel:
    def test_validation(self):
        with pytest.raises(ValueError):
            CovarianceModel(-1.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            CovarianceModel(1.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            CovarianceModel(1.0, float("nan"), 1.0)


class TestBuildCovarianceMatrix:
    def test_single_site_with_nugget(self):
        cov = build_covariance_matrix([(0.0, 0.0)], CovarianceModel(1.0, 0.5, 1.0))
        np.testing.assert_allclose(cov.values, [[1.5]])

    def test_two_sites_at_range_distance(self):
        sites = [(0.0, 0.0), (2.0, 0.0)]
        cov = build_covariance_matrix(sites, CovarianceModel(1.0, 0.0, 2.0, 1.5))
        assert cov.values[0, 1] == pytest.approx(2 * math.exp(-1), abs=1e-9)
        assert cov.values[0, 0] == 1.0

    def test_coincident_sites_after_jitter(self):
        sites = [(0.0, 0.0), (1e-6, 1e-6)]
        cov = build_covariance_matrix(sites, CovarianceModel(1.0, 0.0, 2.0, 1.5))
        assert cov.values[0, 1] == pytest.approx(1.0, abs=1e-9)

    def test_nugget_flag(self):
        sites = [(0.0, 0.0), (1.0, 0.0)]
        model = CovarianceModel(2.0, 0.7, 1.5)
        with_n = build_covariance_matrix(sites, model, include_nugget=True)
        without = build_covariance_matrix(sites, model, include_nugget=False)
        np.testing.assert_allclose(np.diag(with_n.values), 2.7)
        np.testing.assert_allclose(np.diag(without.values), 2.0)
        np.testing.assert_allclose(with_n.values[0, 1], without.values[0, 1])

    def test_cholesky_reconstruction(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            sites = rng.uniform(0, 10, size=(15, 2))
            model = CovarianceModel(1.3, 0.4, 2.5, 1.5)
            cov = build_covariance_matrix(sites, model)
            lower = cov.factor()
            rel = np.linalg.norm(lower @ lower.T - cov.values) / np.linalg.norm(cov.values)
            assert rel < 1e-10

    def test_singularity_error_names_minor(self):
        # exact duplicate rows without nugget cannot factorize
        sites = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
        cov = build_covariance_matrix(sites, CovarianceModel(1.0, 0.0, 2.0))
        with pytest.raises(SingularMatrixError) as err:
            cov.factor()
        assert err.value.minor is not None
        assert str(err.value.minor) in str(err.value)

    def test_chol_inverse_matches_dense_inverse(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((8, 8))
        a = a @ a.T + 8 * np.eye(8)
        inv = chol_inverse(cholesky_lower(a))
        np.testing.assert_allclose(inv, np.linalg.inv(a), rtol=1e-10, atol=1e-12)
        assert np.array_equal(inv, inv.T)


class TestUnconditionalDraw:
    def test_zero_variance_gives_zero_field(self):
        sites = np.random.default_rng(0).uniform(0, 5, (4, 2))
        draw = unconditional_field_draw(sites, CovarianceModel(0.0, 0.0, 1.0), seed=3)
        np.testing.assert_array_equal(draw, np.zeros(4))

    def test_deterministic_given_seed(self):
        sites = np.random.default_rng(1).uniform(0, 5, (6, 2))
        model = CovarianceModel(1.0, 0.0, 2.0)
        a = unconditional_field_draw(sites, model, seed=42)
        b = unconditional_field_draw(sites, model, seed=42)
        np.testing.assert_array_equal(a, b)

    def test_monte_carlo_covariance(self):
        # sample covariance of many draws must approach the model covariance
        sites = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
        model = CovarianceModel(1.5, 0.0, 1.8, 1.5)
        target = build_covariance_matrix(sites, model, include_nugget=False).values
        rng = np.random.default_rng(2024)
        draws = np.array([
            unconditional_field_draw(sites, model, rng) for _ in range(10_000)
        ])
        sample_cov = np.cov(draws.T, bias=True)
        rel = np.abs(sample_cov - target) / np.abs(target)
        assert rel.max() < 0.05


class TestConditionalDraw:
    def test_exact_interpolation_without_nugget(self):
        rng = np.random.default_rng(5)
        obs = rng.uniform(0, 6, (8, 2))
        model = CovarianceModel(1.2, 0.0, 2.0)
        w = unconditional_field_draw(obs, model, seed=9)
        mean, draw = conditional_field_draw(obs, w, obs[:3], model, seed=1)
        np.testing.assert_allclose(mean, w[:3], atol=1e-8)
        np.testing.assert_allclose(draw, w[:3], atol=1e-6)

    def test_independence_limit_far_away(self):
        obs = np.array([[0.0, 0.0], [1.0, 0.0]])
        model = CovarianceModel(2.0, 0.3, 1.0)
        w = np.array([3.0, -1.5])
        far = np.array([[500.0, 500.0]])
        mean, _ = conditional_field_draw(obs, w, far, model, seed=0)
        assert abs(mean[0]) < 1e-8
        # conditional variance approaches the marginal sigma2
        draws = np.array([
            conditional_field_draw(obs, w, far, model, seed=s)[1][0]
            for s in range(4000)
        ])
        assert np.var(draws) == pytest.approx(2.0, rel=0.1)

    def test_matches_partitioned_gaussian_oracle(self):
        # brute-force mean and covariance from the joint covariance matrix
        rng = np.random.default_rng(12)
        obs = rng.uniform(0, 5, (3, 2))
        targets = rng.uniform(0, 5, (2, 2))
        model = CovarianceModel(1.4, 0.6, 2.2, 1.5)
        w = rng.standard_normal(3)

        all_sites = np.vstack([obs, targets])
        dist = pairwise_distances(all_sites)
        joint = model.sigma2 * matern_correlation(dist, model.phi, model.kappa)
        np.fill_diagonal(joint, model.sigma2)
        joint[:3, :3] += model.tau2 * np.eye(3)  # nugget on the observed block
        s_oo = joint[:3, :3]
        s_to = joint[3:, :3]
        s_tt = joint[3:, 3:]
        oracle_mean = s_to @ np.linalg.inv(s_oo) @ w
        oracle_cov = s_tt - s_to @ np.linalg.inv(s_oo) @ s_to.T

        mean, _ = conditional_field_draw(obs, w, targets, model, seed=4)
        np.testing.assert_allclose(mean, oracle_mean, atol=1e-10)
        draws = np.array([
            conditional_field_draw(obs, w, targets, model, seed=s)[1]
            for s in range(6000)
        ])
        np.testing.assert_allclose(draws.mean(axis=0), oracle_mean, atol=0.05)
        np.testing.assert_allclose(np.cov(draws.T, bias=True), oracle_cov, atol=0.05)

    def test_conditional_variance_not_above_marginal(self):
        rng = np.random.default_rng(21)
        obs = rng.uniform(0, 6, (10, 2))
        targets = rng.uniform(0, 6, (5, 2))
        model = CovarianceModel(1.0, 0.2, 2.0)
        w = rng.standard_normal(10)
        draws = np.array([
            conditional_field_draw(obs, w, targets, model, seed=s)[1]
            for s in range(3000)
        ])
        cond_var = draws.var(axis=0)
        assert np.all(cond_var <= model.sigma2 * 1.1)

    def test_sigma_zero_returns_zeros(self):
        obs = np.array([[0.0, 0.0]])
        mean, draw = conditional_field_draw(
            obs, [1.0], [[2.0, 2.0]], CovarianceModel(0.0, 1.0, 1.0), seed=0
        )
        assert mean[0] == 0.0 and draw[0] == 0.0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            conditional_field_draw(
                [[0.0, 0.0]], [1.0, 2.0], [[1.0, 1.0]], CovarianceModel(1.0, 0.1, 1.0), 0
            )
