"""Heteroskedastic GP fitting from a second GP on absolute residuals."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import FitError
from .gp import (
    HETEROSKEDASTIC,
    HOMOSKEDASTIC,
    Design,
    GpFit,
    HyperPrior,
    NoiseSpec,
    fit_hyperparams,
    posterior_f,
    residual_scale,
)

FLOOR_FRACTION = 1e-6


@dataclass(frozen=True)
class NoiseEstimate:
    """Per-point noise standard deviations and how they were obtained."""

    noise_sd: np.ndarray
    residual_fit: GpFit | None
    floor: float
    fallback: bool = False


def default_floor(values) -> float:
    values = np.asarray(values, dtype=float)
    return FLOOR_FRACTION * float(np.std(values, ddof=1)) if values.size > 1 else 0.0


def estimate_pointwise_noise(design: Design, mean_fit: GpFit, q: int = 1, floor=None, seed: int = 0,
                             n_starts: int = 8, warm_start=None) -> NoiseEstimate:
    """Estimate the noise standard deviation at each design point.

    A homoskedastic GP is fitted to ``|y_i - mu(psi_i)|`` and its posterior
    mean, scaled by ``sqrt(pi / 2)``, estimates the noise sd at each point.
    Falls back to the pooled estimate ``sqrt(pi / 2) * mean|r|`` (with
    ``fallback=True``) if the residual GP cannot be fitted.
    """
    s = residual_scale(q)
    if floor is None:
        floor = default_floor(design.values)
    resid = design.values - posterior_f(mean_fit, design.points).mean
    e = np.abs(resid) ** q
    if design.m < 2 or np.ptp(e) == 0 and e.max() * s <= floor:
        return NoiseEstimate(np.full(design.m, max(s * float(e.mean()), floor)), None, floor)
    lower, upper = mean_fit.transform.lower, mean_fit.transform.upper
    try:
        rfit = fit_hyperparams(
            Design(design.points, e), mean_fit.family, HOMOSKEDASTIC,
            bounds=np.column_stack([lower, upper]), seed=seed, n_starts=n_starts, warm_start=warm_start,
        )
    except FitError as exc:
        warnings.warn(f"residual GP fit failed ({exc}); using pooled noise estimate")
        sd = max(s * float(e.mean()), floor)
        return NoiseEstimate(np.full(design.m, sd), None, floor, fallback=True)
    mu_e = posterior_f(rfit, design.points).mean
    return NoiseEstimate(s * np.maximum(mu_e, floor), rfit, floor)


def fit_hetero_gp(
    design: Design,
    family: str = "matern52",
    max_iter: int = 3,
    tol: float = 1e-3,
    prior: HyperPrior | None = None,
    *,
    bounds=None,
    q: int = 1,
    floor=None,
    seed: int = 0,
    n_starts: int = 8,
    refit_starts: int = 2,
    warm_start=None,
) -> GpFit:
    """Alternate between fitting the mean GP and re-estimating per-point noise.

    Starts from a homoskedastic fit; each pass re-estimates the noise from the
    current fit's residuals and refits the kernel with that noise held fixed.
    Stops once the largest relative change in the noise sd is below ``tol``
    or after ``max_iter`` passes.

    The initial fit uses ``n_starts`` Sobol starts (plus ``warm_start``);
    later fits start from the previous pass's parameters plus
    ``refit_starts`` fresh Sobol starts.
    """
    if design.m < 5:
        raise ValueError("heteroskedastic fitting needs at least 5 design points")
    if floor is None:
        floor = default_floor(design.values)
    current = fit_hyperparams(design, family, HOMOSKEDASTIC, prior, bounds=bounds, seed=seed,
                              n_starts=n_starts, warm_start=warm_start)
    bounds = np.column_stack([current.transform.lower, current.transform.upper])
    hm_params = current.diagnostics["params"]
    kernel_warm = hm_params[: design.dim + 1]
    resid_warm = None
    resid_starts = n_starts
    prev_sd = np.full(design.m, np.sqrt(current.noise.variance))
    changes = []
    fallback = False
    it = 0
    for it in range(1, max_iter + 1):
        est = estimate_pointwise_noise(design, current, q=q, floor=floor, seed=seed,
                                       n_starts=resid_starts, warm_start=resid_warm)
        fallback = fallback or est.fallback
        if est.residual_fit is not None:
            resid_warm = est.residual_fit.diagnostics["params"]
            resid_starts = refit_starts
        noise = NoiseSpec.heteroskedastic(est.noise_sd, est.residual_fit, q=q, floor=floor)
        current = fit_hyperparams(
            design, family, HETEROSKEDASTIC, prior, bounds=bounds, noise=noise, seed=seed,
            n_starts=refit_starts, warm_start=kernel_warm,
        )
        kernel_warm = current.diagnostics["params"]
        denom = np.maximum(prev_sd, np.finfo(float).tiny)
        change = float(np.max(np.abs(est.noise_sd - prev_sd) / denom))
        changes.append(change)
        prev_sd = est.noise_sd
        if change < tol:
            break
    diag = dict(current.diagnostics, iterations=it, relative_changes=changes, fallback=fallback,
                hm_params=hm_params)
    return replace(current, diagnostics=diag)


__all__ = ["NoiseEstimate", "default_floor", "estimate_pointwise_noise", "fit_hetero_gp"]
