"""End-to-end acceptance checks.

Each check prints one ``CRITERION <k>: PASS|FAIL|SKIP`` line. Criteria 1-3
run 100-replicate Monte Carlo studies and take tens of minutes on one core;
set ``DTRGP_WORKERS`` to use more processes. Criterion 6 needs the public
trial CSV at the path in ``DTRGP_TRIAL_CSV``.

Run as ``pytest tests/test_acceptance.py -s`` or ``python tests/test_acceptance.py``.
"""
from __future__ import annotations

import functools
import os
import sys

import numpy as np
import pytest
from scipy import integrate, stats

from dtrgp.bo import BoConfig, expected_improvement, reinterpolate, run_bo
from dtrgp.case_study import (
    UncertaintyConfig,
    bootstrap_baselines,
    load_cohort_csv,
    optimizer_uncertainty,
    threshold_family,
)
from dtrgp.dtr import (
    Cohort,
    KnownPropensity,
    ThresholdPerStage,
    bayesian_bootstrap_weights,
    ipw_value,
)
from dtrgp.gp import (
    Design,
    fit_hyperparams,
    posterior_f,
    sample_posterior_paths,
)
from dtrgp.harness import ExperimentConfig, run_replicates, summarize, summary_lookup
from dtrgp.hetero import estimate_pointwise_noise
from dtrgp.scenarios import monte_carlo_value, true_value

R = 100
SEED = 20240607
WORKERS = int(os.environ.get("DTRGP_WORKERS", "0")) or os.cpu_count() or 1
TRIAL_CSV = os.environ.get("DTRGP_TRIAL_CSV")

slow = pytest.mark.slow
CRITERION_LINES = []  # repeated in the terminal summary by conftest


def emit(line):
    CRITERION_LINES.append(line)
    sys.__stdout__.write(f"\n{line}\n")
    sys.__stdout__.flush()


def report(k, ok, detail):
    emit(f"CRITERION {k}: {'PASS' if ok else 'FAIL'}  {detail}")


def check(k, conditions):
    """``conditions`` maps a description to a bool; report and assert all."""
    ok = all(conditions.values())
    failed = [d for d, c in conditions.items() if not c]
    report(k, ok, "; ".join(conditions) if ok else "failed: " + "; ".join(failed))
    assert ok, failed


@functools.cache
def sim1_results():
    cfg = ExperimentConfig(scenario="sim1", n=500, replicates=R, methods=("grid", "hm"), budget=25, seed=SEED)
    return run_replicates(cfg, workers=WORKERS)


@functools.cache
def sim2_results():
    cfg = ExperimentConfig(scenario="sim2", n=500, replicates=R, methods=("hm", "he"), budget=25, seed=SEED)
    return run_replicates(cfg, workers=WORKERS)


# ---------------------------------------------------------------- 1-3


@slow
def test_criterion_1_sim1_hm():
    s = summarize(sim1_results())
    psi = summary_lookup(s, "hm", 25, "psi_1")
    val = summary_lookup(s, "hm", 25, "value")
    check(1, {
        f"median psi {psi.median:.3f} in [0.80, 0.93]": 0.80 <= psi.median <= 0.93,
        f"IQR {psi.iqr:.3f} <= 0.6": psi.iqr <= 0.6,
        f"median value {val.median:.4f} in [0.15, 0.19]": 0.15 <= val.median <= 0.19,
    })


@slow
def test_criterion_2_sim1_grid():
    res = sim1_results()
    s = summarize(res)
    psi = summary_lookup(s, "grid", None, "psi_1")
    hm_evals = [r.n_evaluations for r in res if r.method == "hm" and r.ok]
    grid_evals = [r.n_evaluations for r in res if r.method == "grid" and r.ok]
    check(2, {
        f"median grid psi {psi.median:.3f} in [0.75, 0.95]": 0.75 <= psi.median <= 0.95,
        f"grid IQR {psi.iqr:.3f} >= 1.0": psi.iqr >= 1.0,
        f"HM evaluations {sorted(set(hm_evals))} == 38": set(hm_evals) == {38},
        f"grid evaluations {sorted(set(grid_evals))} == 300": set(grid_evals) == {300},
    })


@slow
def test_criterion_3_sim2_hm_he():
    s = summarize(sim2_results())
    conds = {}
    for m in ("hm", "he"):
        p1 = summary_lookup(s, m, 25, "psi_1").median
        p2 = summary_lookup(s, m, 25, "psi_2").median
        v = summary_lookup(s, m, 25, "value").median
        conds[f"{m} median psi_1 {p1:.3f} within 1.8 +/- 0.10"] = abs(p1 - 1.8) <= 0.10 + 1e-12
        conds[f"{m} median psi_2 {p2:.3f} in [-0.42, -0.22]"] = -0.42 <= p2 <= -0.22
        conds[f"{m} median value {v:.4f} in [0.22, 0.31]"] = 0.22 <= v <= 0.31
    check(3, conds)


# ---------------------------------------------------------------- 4


def _sim2_quadrature(a, b):
    """Independent value of the sim2 threshold rule by numerical integration."""
    p1 = lambda x: (x + 2.25) * (x + 1.5) * (x + 0.3) * (x - 1.8) * (x - 0.75)
    p2 = lambda x: (x + 2.1) * (x + 1.65) * (x + 0.3) * (x - 2.1) * (x - 1.35)
    n1 = stats.norm(0, 1.5).pdf
    first = integrate.quad(lambda x: -0.2 * p1(x) * (float(x > 1.5) - float(x > a)) * n1(x),
                           -15, 15, points=[a, 1.5], limit=200)[0]

    def second(z1):
        d = stats.norm(1.5 * z1, 1.5).pdf
        return integrate.quad(lambda x: -0.2 * p2(x) * (float(x > 0.75) - float(x > b)) * d(x),
                              -15, 15, points=[b, 0.75], limit=200)[0]

    pz = stats.norm(0, 1.5).sf(a)
    return first + pz * second(1) + (1 - pz) * second(0)


@slow
def test_criterion_4_oracles():
    v1, _ = true_value("sim1", [0.9])
    mc1, se1 = monte_carlo_value("sim1", [0.9], n_draws=10**7, seed=4)
    v2, se2 = true_value("sim2", [1.8, -0.3], n_draws=10**6, seed=4)
    quad = _sim2_quadrature(1.8, -0.3)
    check(4, {
        f"sim1 closed form {v1:.5f} = 0.165 +/- 0.001": abs(v1 - 0.165) <= 1e-3,
        f"sim1 1e7-draw MC {mc1:.5f} (se {se1:.5f}) = 0.165 +/- 0.001": abs(mc1 - 0.165) <= 1e-3,
        "sim1 MC within 3 se of closed form": abs(mc1 - v1) <= 3 * se1,
        f"sim2 MC {v2:.5f} within 3 se ({3 * se2:.5f}) of 0.241": abs(v2 - 0.241) <= 3 * se2,
        f"sim2 MC within 3 se of quadrature {quad:.5f}": abs(v2 - quad) <= 3 * se2,
    })


# ---------------------------------------------------------------- 5


def _fuzz_reinterpolation(runs=50):
    """Check every surrogate fitted during 50 short noisy runs."""
    worst_mean, worst_var, n_fits = 0.0, 0.0, 0
    for r in range(runs):
        rng = np.random.default_rng(r)
        D = 1 + r % 2
        sd = 0.05 + 0.3 * rng.uniform()
        noise = np.random.default_rng(1000 + r)
        evaluator = lambda p, sd=sd, noise=noise: float(np.sin(3 * np.asarray(p)).sum() + sd * noise.standard_normal())
        bounds = np.array([[-1.0, 2.0]] * D)
        start = rng.uniform(-1, 2, (6 + 4 * D, D))
        cfg = BoConfig(gp_type="hm" if r % 2 == 0 else "he", budget=4, n_starts=4)
        trace = run_bo(evaluator, start, cfg, rng=r, bounds=bounds, checkpoints=range(5), keep_fits=True)
        grid = rng.uniform(-1, 2, (200, D))
        for fit in trace.fits.values():
            ri = reinterpolate(fit)
            gap = np.abs(posterior_f(fit, grid).mean - posterior_f(ri, grid).mean)
            worst_mean = max(worst_mean, float(gap.max()))
            var = posterior_f(ri, fit.design.points).variance
            worst_var = max(worst_var, float(var.max() / ri.jitter))
            n_fits += 1
    return worst_mean, worst_var, n_fits


def _interpolation_exact():
    rng = np.random.default_rng(1)
    X = rng.uniform(0, 1, (15, 2))
    y = np.cos(4 * X[:, 0]) + X[:, 1]
    fit = fit_hyperparams(Design(X, y), "matern52", "interpolating", seed=1)
    pm = posterior_f(fit, X)
    return float(np.max(np.abs(pm.mean - y))), float(np.max(pm.variance)), fit.jitter


def _ei_checks():
    rng = np.random.default_rng(5)
    mu = rng.normal(0, 3, 10**5)
    sd = np.abs(rng.normal(0, 2, 10**5))
    base = rng.normal(0, 3, 10**5)
    ei = expected_improvement(mu, sd, base)
    zero = expected_improvement(mu, np.zeros_like(mu), base)
    return bool(np.all(ei >= 0)), bool(np.all(zero == 0))


def _dirichlet_checks(n=7, draws=10**4):
    rng = np.random.default_rng(6)
    W = np.array([bayesian_bootstrap_weights(n, rng) for _ in range(draws)])
    simplex = bool(np.all(W >= 0) and np.all(np.abs(W.sum(1) - 1) < 1e-12))
    se = W[:, 0].std(ddof=1) / np.sqrt(draws)
    return simplex, abs(W[:, 0].mean() - 1 / n) <= 3 * se


def _ipw_hand():
    x = np.array([0.5, -0.5, 0.7])[:, None, None]
    z = np.array([1, 0, 0])[:, None]
    y = np.array([2.0, 1.0, 5.0])
    cohort = Cohort(x, z, y)
    p_treat = np.array([0.8, 0.4, 0.5])
    prop = KnownPropensity(lambda c, t: p_treat)
    v = ipw_value(cohort, ThresholdPerStage([[-1, 1]]), [0.0], prop)
    expected = (1.25 * 2 + (1 / 0.6) * 1) / (1.25 + 1 / 0.6)
    return abs(v - expected)


def _noise_recovery(repeats=50):
    errs = []
    for r in range(repeats):
        rng = np.random.default_rng(100 + r)
        psi = np.linspace(0, 1, 200)
        g = 0.1 + 0.4 * psi
        d = Design(psi[:, None], g * rng.standard_normal(200))
        f = fit_hyperparams(d, "matern52", "homoskedastic", bounds=[[0, 1]], seed=r)
        est = estimate_pointwise_noise(d, f, seed=r)
        errs.append(np.sqrt(np.mean(((est.noise_sd - g) / g) ** 2)))
    return float(np.mean(errs))


def _path_consistency(n_paths=10**4):
    rng = np.random.default_rng(8)
    X = np.linspace(0, 1, 8)[:, None]
    y = np.sin(5 * X[:, 0]) + rng.normal(0, 0.1, 8)
    fit = fit_hyperparams(Design(X, y), "matern52", "homoskedastic", seed=0)
    grid = np.linspace(0, 1, 25)[:, None]
    paths = sample_posterior_paths(fit, grid, n_paths, np.random.default_rng(9))
    pm = posterior_f(fit, grid, full_cov=True)
    se = paths.std(0, ddof=1) / np.sqrt(n_paths)
    mean_ok = bool(np.all(np.abs(paths.mean(0) - pm.mean) <= 3 * se + 1e-12))
    cov_err = np.linalg.norm(np.cov(paths.T) - pm.covariance) / np.linalg.norm(pm.covariance)
    return mean_ok, float(cov_err)


@slow
def test_criterion_5_properties():
    worst_mean, worst_var_ratio, n_fits = _fuzz_reinterpolation()
    interp_mean, interp_var, jit = _interpolation_exact()
    ei_pos, ei_zero = _ei_checks()
    simplex, dmean = _dirichlet_checks()
    ipw_err = _ipw_hand()
    noise_err = _noise_recovery()
    path_mean_ok, cov_err = _path_consistency()
    check(5, {
        f"re-interpolation mean gap {worst_mean:.2e} <= 1e-6 over {n_fits} fits": worst_mean <= 1e-6,
        f"re-interpolated sample variance <= 10 x jitter (ratio {worst_var_ratio:.2f})": worst_var_ratio <= 10,
        f"interpolating fit exact at samples ({interp_mean:.1e}, var {interp_var:.1e})":
            interp_mean <= 1e-6 and interp_var <= 10 * jit,
        "EI >= 0 over 1e5 inputs": ei_pos,
        "EI(sd=0) = 0": ei_zero,
        "Dirichlet simplex": simplex,
        "E[pi_1] ~ 1/n": dmean,
        f"IPW hand example error {ipw_err:.1e} <= 1e-12": ipw_err <= 1e-12,
        f"noise recovery RMS rel. error {noise_err:.3f} < 0.30": noise_err < 0.30,
        "path mean within 3 MC se": path_mean_ok,
        f"path covariance rel. error {cov_err:.3f} < 0.10": cov_err < 0.10,
    })


# ---------------------------------------------------------------- 6


@slow
@pytest.mark.skipif(not TRIAL_CSV, reason="DTRGP_TRIAL_CSV not set; trial data not available")
def test_criterion_6_case_study():
    cohort = load_cohort_csv(TRIAL_CSV)
    family = threshold_family()
    base, _ = bootstrap_baselines(cohort, family, B=500, seed=SEED, workers=WORKERS)
    coarse = base["coarse"]
    cfg = UncertaintyConfig(B=500, N=250, checkpoints=(25,), gp_type="hm")
    gp, _ = optimizer_uncertainty(cohort, family, cfg, seed=SEED, workers=WORKERS)
    hm = gp[25]
    check(6, {
        f"n = {cohort.n} == 1046": cohort.n == 1046,
        f"coarse psi_CD4 {coarse['psi_CD4'].median:.1f} within 305 +/- 35": abs(coarse["psi_CD4"].median - 305) <= 35,
        f"coarse psi_W {coarse['psi_W'].median:.1f} within 95 +/- 5": abs(coarse["psi_W"].median - 95) <= 5,
        f"coarse value {coarse['value'].median:.1f} within 408 +/- 5": abs(coarse["value"].median - 408) <= 5,
        f"HM +25 psi_W {hm['psi_W'].median:.1f} within 98 +/- 5": abs(hm["psi_W"].median - 98) <= 5,
        f"HM +25 psi_CD4 {hm['psi_CD4'].median:.1f} within 290 +/- 35": abs(hm["psi_CD4"].median - 290) <= 35,
        f"HM +25 value {hm['value'].median:.1f} within 408.2 +/- 5": abs(hm["value"].median - 408.2) <= 5,
    })


def test_criterion_6_skip_notice():
    if not TRIAL_CSV:
        emit("CRITERION 6: SKIP  (set DTRGP_TRIAL_CSV to the public trial CSV to run)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
