import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtrgp.gp import (
    Design,
    HyperPrior,
    NoiseSpec,
    UnitCube,
    condition,
    fit_hyperparams,
    log_marginal_likelihood,
    posterior_f,
    posterior_v,
    sample_posterior_paths,
)
from dtrgp.kernels import KernelSpec, build_covariance

UNIT = UnitCube.from_bounds([[0.0, 1.0]])


def one_point(noise_var=0.0, y=2.0, mu0=0.0):
    d = Design([[0.5]], [y])
    noise = NoiseSpec.interpolating() if noise_var == 0 else NoiseSpec.homoskedastic(noise_var)
    return condition(d, KernelSpec("matern52", [0.2], 1.0), noise, UNIT, prior_mean=mu0)


# ---------------------------------------------------------------- likelihood


def test_lml_single_point_unit_variance():
    d = Design([[0.0]], [0.0])
    v = log_marginal_likelihood(d, 0.0, KernelSpec("matern52", [1.0], 1.0), NoiseSpec.interpolating())
    assert v == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-9)


def test_lml_single_point_with_noise():
    d = Design([[0.0]], [0.0])
    v = log_marginal_likelihood(d, 0.0, KernelSpec("matern52", [1.0], 1.0), NoiseSpec.homoskedastic(3.0))
    assert v == pytest.approx(-0.5 * math.log(8 * math.pi), abs=1e-9)


def test_lml_matches_scipy_multivariate_normal():
    from scipy.stats import multivariate_normal

    rng = np.random.default_rng(0)
    X = rng.uniform(0, 3, (9, 2))
    y = rng.normal(size=9)
    k = KernelSpec("matern32", [0.8, 1.5], 1.3)
    C = build_covariance(k, X) + 0.2 * np.eye(9)
    expected = multivariate_normal(np.full(9, 0.4), C).logpdf(y)
    got = log_marginal_likelihood(Design(X, y), 0.4, k, NoiseSpec.homoskedastic(0.2))
    assert got == pytest.approx(expected, rel=1e-6)


def test_lml_permutation_invariant():
    rng = np.random.default_rng(1)
    X, y = rng.uniform(size=(12, 2)), rng.normal(size=12)
    k = KernelSpec("matern52", [0.3, 0.6], 2.0)
    perm = rng.permutation(12)
    a = log_marginal_likelihood(Design(X, y), 0.1, k, NoiseSpec.homoskedastic(0.1))
    b = log_marginal_likelihood(Design(X[perm], y[perm]), 0.1, k, NoiseSpec.homoskedastic(0.1))
    assert a == pytest.approx(b, rel=1e-12)


# ---------------------------------------------------------------- fitting


def test_fit_beats_generating_parameters():
    rng = np.random.default_rng(3)
    X = np.sort(rng.uniform(0, 1, 60))[:, None]
    k_true = KernelSpec("matern52", [0.3], 1.0)
    C = build_covariance(k_true, X) + 0.01 * np.eye(60)
    y = np.linalg.cholesky(C) @ rng.standard_normal(60)
    d = Design(X, y)
    fit = fit_hyperparams(d, "matern52", "homoskedastic", bounds=[[0, 1]], seed=0)
    at_truth = condition(d, k_true, NoiseSpec.homoskedastic(0.01), UNIT).log_marginal_likelihood
    assert fit.objective >= at_truth - 1e-9
    assert fit.log_marginal_likelihood == pytest.approx(fit.objective, rel=1e-9)


def test_constant_response_profiles_mean():
    d = Design(np.linspace(0, 1, 6)[:, None], np.full(6, 3.7))
    fit = fit_hyperparams(d, "matern52", "homoskedastic", seed=0)
    assert fit.prior_mean == pytest.approx(3.7, abs=1e-9)


def test_degenerate_prior_pins_length_scale():
    rng = np.random.default_rng(4)
    X = rng.uniform(0, 1, (15, 1))
    y = np.sin(6 * X[:, 0]) + rng.normal(0, 0.1, 15)
    theta0 = 0.37
    prior = HyperPrior(theta_log_mean=math.log(theta0), theta_log_sd=1e-6)
    fit = fit_hyperparams(Design(X, y), "matern52", "homoskedastic", prior, bounds=[[0, 1]], seed=0)
    assert fit.kernel.length_scales[0] == pytest.approx(theta0, abs=1e-3)
    assert fit.diagnostics["map"]


@pytest.mark.parametrize("seed", [102, 105, 108, 124])
def test_pure_noise_not_absorbed_by_white_signal(seed):
    # length scales below the design spacing would make the signal white and
    # let the mean chase the noise; the fit must attribute it to noise instead
    rng = np.random.default_rng(seed)
    psi = np.linspace(0, 1, 200)
    d = Design(psi[:, None], 0.3 * rng.standard_normal(200))
    fit = fit_hyperparams(d, "matern52", "homoskedastic", bounds=[[0, 1]], seed=0)
    assert fit.kernel.length_scales[0] >= 2 * np.diff(psi)[0] * (1 - 1e-12)
    resid = d.values - posterior_f(fit, d.points).mean
    assert np.std(resid) > 0.8 * 0.3
    assert math.sqrt(fit.noise.variance) == pytest.approx(0.3, rel=0.2)


def test_empirical_bayes_needs_two_points():
    with pytest.raises(ValueError):
        fit_hyperparams(Design([[0.0]], [1.0]))


@pytest.mark.parametrize("mode", ["interpolating", "homoskedastic"])
@pytest.mark.parametrize("optimizer", ["l-bfgs-b", "nelder-mead"])
def test_monotone_likelihood_over_starts(mode, optimizer):
    rng = np.random.default_rng(5)
    X = rng.uniform(-2, 2, (20, 2))
    y = np.cos(X).sum(1) + rng.normal(0, 0.2, 20)
    fit = fit_hyperparams(Design(X, y), "matern32", mode, seed=1, optimizer=optimizer)
    starts = fit.diagnostics["start_objectives"]
    assert len(starts) == 8
    assert all(fit.objective >= s for s in starts)


def test_warm_start_is_an_extra_start():
    rng = np.random.default_rng(6)
    X = rng.uniform(0, 1, (10, 1))
    y = X[:, 0] ** 2
    first = fit_hyperparams(Design(X, y), seed=0)
    again = fit_hyperparams(Design(X, y), seed=0, warm_start=first.diagnostics["params"])
    assert len(again.diagnostics["start_objectives"]) == 9
    assert again.objective >= first.objective - 1e-9


def test_fit_invariant_to_response_scale():
    rng = np.random.default_rng(7)
    X = rng.uniform(0, 1, (14, 1))
    y = np.sin(5 * X[:, 0]) + rng.normal(0, 0.1, 14)
    a = fit_hyperparams(Design(X, y), seed=2)
    b = fit_hyperparams(Design(X, 1000 * y), seed=2)
    assert a.kernel.length_scales[0] == pytest.approx(b.kernel.length_scales[0], rel=1e-5)
    assert b.noise.variance == pytest.approx(1e6 * a.noise.variance, rel=1e-4)


def test_factorization_and_dual_weights_contract():
    rng = np.random.default_rng(8)
    X = rng.uniform(0, 1, (25, 2))
    y = rng.normal(size=25)
    fit = fit_hyperparams(Design(X, y), seed=0)
    C = fit.covariance_matrix() + fit.jitter * np.eye(25)
    L = fit.chol
    assert np.linalg.norm(L @ L.T - C) / np.linalg.norm(C) < 1e-8
    resid = C @ fit.dual_weights - (y - fit.prior_mean)
    assert np.linalg.norm(resid) / np.linalg.norm(y - fit.prior_mean) < 1e-8


# ---------------------------------------------------------------- posteriors


def test_posterior_at_sample_interpolates():
    pm = posterior_f(one_point(), [[0.5]])
    assert pm.mean[0] == pytest.approx(2.0, abs=1e-9)
    assert pm.variance[0] == pytest.approx(0.0, abs=1e-9)


def test_posterior_with_unit_noise():
    pm = posterior_f(one_point(1.0), [[0.5]])
    assert pm.mean[0] == pytest.approx(1.0, abs=1e-9)
    assert pm.variance[0] == pytest.approx(0.5, abs=1e-9)


def test_far_query_reverts_to_prior():
    fit = condition(Design([[0.5]], [2.0]), KernelSpec("matern52", [0.01], 1.0), NoiseSpec.interpolating(),
                    UNIT, prior_mean=0.0)
    pm = posterior_f(fit, [[1.0]])
    assert pm.mean[0] == pytest.approx(0.0, abs=1e-6)
    assert pm.variance[0] == pytest.approx(1.0, abs=1e-6)


def test_posterior_v_examples():
    pm = posterior_v(one_point(), [[0.5]])
    assert (pm.mean[0], pm.variance[0]) == pytest.approx((2.0, 0.0), abs=1e-9)
    pm = posterior_v(one_point(1.0), [[0.5]], 1.0)
    assert (pm.mean[0], pm.variance[0]) == pytest.approx((1.0, 1.5), abs=1e-9)
    far = condition(Design([[0.5]], [2.0]), KernelSpec("matern52", [0.01], 1.0), NoiseSpec.interpolating(),
                    UNIT, prior_mean=0.0)
    pm = posterior_v(far, [[1.0]], 0.2)
    assert (pm.mean[0], pm.variance[0]) == pytest.approx((0.0, 1.2), abs=1e-6)


def test_posterior_v_defaults_to_fitted_noise():
    fit = one_point(0.3)
    assert posterior_v(fit, [[0.1]]).variance[0] == pytest.approx(posterior_f(fit, [[0.1]]).variance[0] + 0.3)


def test_negative_noise_rejected():
    with pytest.raises(ValueError):
        posterior_v(one_point(), [[0.5]], -1.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), g2=st.floats(0.0, 5.0))
def test_variance_decomposition(seed, g2):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, (6, 2))
    fit = condition(Design(X, rng.normal(size=6)), KernelSpec("matern52", [0.4, 0.4], 1.0),
                    NoiseSpec.homoskedastic(0.1), UnitCube.from_bounds([[0, 1], [0, 1]]))
    Q = rng.uniform(0, 1, (5, 2))
    f, v = posterior_f(fit, Q), posterior_v(fit, Q, g2)
    assert np.array_equal(f.mean, v.mean)
    assert np.allclose(v.variance - f.variance, g2, rtol=0, atol=1e-15 * max(1, g2))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_interpolating_fit_is_exact(seed):
    rng = np.random.default_rng(seed)
    # well-separated random design; near-duplicates are handled by jitter instead
    X = np.cumsum(rng.uniform(0.05, 0.15, 8))[:, None]
    y = rng.normal(size=8)
    fit = condition(Design(X, y), KernelSpec("matern52", [0.2], 1.0), NoiseSpec.interpolating(), UNIT)
    pm = posterior_f(fit, X)
    assert np.max(np.abs(pm.mean - y)) < 1e-6
    assert np.all(pm.variance <= 10 * fit.jitter)


def test_shrinkage_under_huge_noise():
    rng = np.random.default_rng(9)
    X = rng.uniform(0, 1, (10, 1))
    fit = condition(Design(X, rng.normal(size=10)), KernelSpec("matern52", [0.3], 1.0),
                    NoiseSpec.homoskedastic(1e8), UNIT)
    assert np.all(np.abs(posterior_f(fit, np.linspace(0, 1, 7)[:, None]).mean - fit.prior_mean) < 1e-3)


def test_full_covariance_symmetric_psd():
    fit = one_point(0.1)
    pm = posterior_f(fit, np.linspace(0, 1, 30)[:, None], full_cov=True)
    assert np.array_equal(pm.covariance, pm.covariance.T)
    assert np.linalg.eigvalsh(pm.covariance).min() > -1e-10
    assert np.allclose(np.diag(pm.covariance), pm.variance)


# ---------------------------------------------------------------- paths


def test_paths_through_noise_free_samples():
    X = np.array([[0.1], [0.4], [0.9]])
    y = np.array([1.0, -0.5, 0.3])
    fit = condition(Design(X, y), KernelSpec("matern52", [0.3], 1.0), NoiseSpec.interpolating(), UNIT)
    paths = sample_posterior_paths(fit, X, 50, np.random.default_rng(0))
    assert paths.shape == (50, 3)
    assert np.allclose(paths, y, atol=1e-3)


def test_paths_deterministic_and_consistent():
    rng = np.random.default_rng(2)
    X = np.linspace(0, 1, 6)[:, None]
    fit = condition(Design(X, np.sin(4 * X[:, 0])), KernelSpec("matern52", [0.3], 1.0),
                    NoiseSpec.homoskedastic(0.05), UNIT)
    grid = np.linspace(0, 1, 15)[:, None]
    a = sample_posterior_paths(fit, grid, 10**4, 11)
    b = sample_posterior_paths(fit, grid, 10**4, 11)
    assert np.array_equal(a, b)
    pm = posterior_f(fit, grid, full_cov=True)
    se = a.std(0, ddof=1) / 100
    assert np.all(np.abs(a.mean(0) - pm.mean) <= 3 * se + 1e-12)
    err = np.linalg.norm(np.cov(a.T) - pm.covariance) / np.linalg.norm(pm.covariance)
    assert err < 0.10
    del rng


# ---------------------------------------------------------------- data types


def test_design_validation():
    with pytest.raises(ValueError):
        Design([[0.0]], [np.nan])
    with pytest.raises(ValueError):
        Design(np.empty((0, 1)), [])
    d = Design([[0.0], [1.0]], [1.0, 2.0]).append([0.5], 3.0)
    assert d.tags == ("design", "design", "infill") and d.m == 3
    assert d.min_separation() == pytest.approx(0.5)


def test_unit_cube_roundtrip():
    cube = UnitCube.from_bounds([[50, 100], [200, 600]])
    P = np.array([[50.0, 600.0], [75.0, 400.0]])
    assert np.allclose(cube.to_unit(P), [[0, 1], [0.5, 0.5]])
    assert np.allclose(cube.from_unit(cube.to_unit(P)), P)


def test_prior_requires_positive_sd():
    with pytest.raises(ValueError):
        HyperPrior(theta_log_sd=0.0)
