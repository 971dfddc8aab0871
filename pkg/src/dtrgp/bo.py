"""Sequential design with Expected Improvement on re-interpolated GP surrogates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm

from .errors import DtrGpError, SaturationError
from .gp import (
    HOMOSKEDASTIC,
    INTERPOLATING,
    Design,
    GpFit,
    HyperPrior,
    NoiseSpec,
    PosteriorMoments,
    UnitCube,
    condition,
    fit_hyperparams,
    posterior_f,
    posterior_v,
)
from .hetero import fit_hetero_gp

GP_TYPES = ("int", "hm", "he")
OBSERVED_MAX = "observed_max"
REINTERPOLATED_MAX = "reinterpolated_max"
MAX_CANDIDATES = 2**14


@dataclass(frozen=True)
class BoConfig:
    """Settings of one sequential-design run.

    ``min_distance`` is relative to the range of each index dimension.
    ``ei_baseline`` defaults to the observed maximum for interpolating runs
    and to the maximum re-interpolated value for regressive ones. The
    plateau stop triggers after ``ei_patience`` consecutive iterations with
    maximal EI below ``ei_tol`` and is off when ``ei_tol`` is ``None``.
    """

    gp_type: str = "hm"
    family: str = "matern52"
    budget: int = 25
    candidates_per_dim: int | None = None
    min_distance: float = 1e-6
    ei_baseline: str | None = None
    ei_tol: float | None = None
    ei_patience: int = 3
    prior: HyperPrior | None = None
    n_starts: int = 8
    hetero_max_iter: int = 3
    hetero_tol: float = 1e-3
    refine: bool = True

    def __post_init__(self):
        if self.gp_type not in GP_TYPES:
            raise ValueError(f"gp_type must be one of {GP_TYPES}, got {self.gp_type!r}")
        if self.budget < 0:
            raise ValueError("budget must be nonnegative")
        if not self.min_distance > 0:
            raise ValueError("min_distance must be positive")
        if self.ei_baseline not in (None, OBSERVED_MAX, REINTERPOLATED_MAX):
            raise ValueError(f"unknown EI baseline {self.ei_baseline!r}")

    @property
    def baseline_mode(self) -> str:
        if self.ei_baseline is not None:
            return self.ei_baseline
        return OBSERVED_MAX if self.gp_type == "int" else REINTERPOLATED_MAX


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    psi: tuple
    value: float
    max_ei: float
    incumbent_psi: tuple
    incumbent_value: float
    tag: str = "infill"


@dataclass(frozen=True)
class BoTrace:
    """Record of a run: one entry per evaluated point, in order.

    ``checkpoints`` maps a number of accepted infills to the incumbent
    ``(psi, value)`` at that stage, ``fits`` to the surrogate fitted then.
    """

    entries: tuple
    failed: tuple = ()
    design: Design | None = None
    checkpoints: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    n_evaluations: int = 0
    stopped_early: bool = False

    def __len__(self):
        return len(self.entries)

    @property
    def incumbent(self):
        last = self.entries[-1]
        return np.asarray(last.incumbent_psi), last.incumbent_value


def fit_surrogate(design: Design, config: BoConfig, bounds, seed: int = 0, warm_start=None) -> GpFit:
    """Fit the GP named by ``config.gp_type`` on ``design``."""
    if config.gp_type == "int":
        return fit_hyperparams(design, config.family, INTERPOLATING, config.prior, bounds=bounds,
                               n_starts=config.n_starts, seed=seed, warm_start=warm_start)
    if config.gp_type == "hm":
        return fit_hyperparams(design, config.family, HOMOSKEDASTIC, config.prior, bounds=bounds,
                               n_starts=config.n_starts, seed=seed, warm_start=warm_start)
    return fit_hetero_gp(design, config.family, config.hetero_max_iter, config.hetero_tol,
                         config.prior, bounds=bounds, seed=seed, n_starts=config.n_starts,
                         warm_start=warm_start)


def reinterpolate(fit: GpFit, design: Design | None = None) -> GpFit:
    """Interpolating GP through the regressive fit's predicted means.

    Kernel hyperparameters and the prior mean are reused unchanged, so the
    posterior mean coincides with the regressive one while the posterior
    variance vanishes at the sampled points. Identity for interpolating fits.

    On the fit's own design the interpolant's dual weights ``K^-1 (mu - m)``
    equal ``(K + S)^-1 (y - m)`` exactly, so the regressive weights are
    carried over; solving through the jittered factor instead would leave a
    jitter-sized mean gap wherever ``K`` is near-singular.
    """
    if not fit.is_regressive:
        return fit
    own = design is None or design is fit.design
    design = fit.design if design is None else design
    predicted = posterior_f(fit, design.points).mean
    d2 = Design(design.points, predicted, design.tags)
    out = condition(d2, fit.kernel, NoiseSpec.interpolating(), fit.transform, prior_mean=fit.prior_mean)
    if own:
        out = replace(out, dual_weights=fit.dual_weights.copy())
    return out


def expected_improvement(mean, sd, baseline):
    """EI for maximization; zero wherever ``sd`` is zero.

    Accepts scalars or arrays (broadcast); returns the same shape.
    """
    mean, sd = np.broadcast_arrays(np.asarray(mean, dtype=float), np.asarray(sd, dtype=float))
    if np.any(sd < 0):
        raise ValueError("sd must be nonnegative")
    diff = mean - baseline
    out = np.zeros(mean.shape)
    pos = sd > 0
    if np.any(pos):
        with np.errstate(over="ignore"):  # z = +-inf for subnormal sd is handled by cdf/pdf
            z = diff[pos] / sd[pos]
            out[pos] = diff[pos] * norm.cdf(z) + sd[pos] * norm.pdf(z)
    out = np.maximum(out, 0.0)
    return out if out.ndim else float(out)


def ei_from_moments(moments: PosteriorMoments, baseline: float):
    return expected_improvement(moments.mean, np.sqrt(moments.variance), baseline)


def _per_dim(D, per_dim=None):
    if per_dim is None:
        per_dim = 512 if D == 1 else 101 if D == 2 else int(MAX_CANDIDATES ** (1.0 / D))
    return max(2, min(per_dim, round(MAX_CANDIDATES ** (1.0 / D))))


def candidate_grid(bounds, per_dim: int | None = None) -> np.ndarray:
    """Uniform grid over the box in lexicographic order (first coordinate slowest)."""
    b = np.atleast_2d(np.asarray(bounds, dtype=float))
    per_dim = _per_dim(b.shape[0], per_dim)
    axes = [np.linspace(lo, hi, per_dim) for lo, hi in b]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in mesh])


def _excluded(points_unit, taken_unit, radius):
    if len(taken_unit) == 0:
        return np.zeros(len(points_unit), dtype=bool)
    d2 = ((points_unit[:, None, :] - taken_unit[None, :, :]) ** 2).sum(-1)
    return (d2 < radius * radius).any(axis=1)


def baseline_value(fit_for_ei: GpFit, design: Design, mode: str) -> float:
    if mode == OBSERVED_MAX:
        return float(np.max(design.values))
    return float(np.max(fit_for_ei.design.values))


def propose_next(fit_for_ei: GpFit, design: Design, config: BoConfig, bounds=None, exclude=None,
                 baseline=None, return_ei=False):
    """Maximize EI over a candidate grid, then polish with Nelder-Mead.

    Candidates closer than ``config.min_distance`` (relative to each index
    range) to a design point or to an ``exclude`` point are skipped. Ties
    in EI go to the lexicographically smallest candidate.
    """
    bounds = np.atleast_2d(bounds if bounds is not None else np.column_stack(
        [fit_for_ei.transform.lower, fit_for_ei.transform.upper]))
    cube = UnitCube.from_bounds(bounds)
    if baseline is None:
        baseline = baseline_value(fit_for_ei, design, config.baseline_mode)
    cands = candidate_grid(bounds, config.candidates_per_dim)
    taken = design.points if exclude is None or len(exclude) == 0 else np.vstack(
        [design.points, np.atleast_2d(exclude)])
    taken_u = cube.to_unit(taken)
    keep = ~_excluded(cube.to_unit(cands), taken_u, config.min_distance)
    if not np.any(keep):
        raise SaturationError("every candidate is within the exclusion distance of a sampled point")
    cands = cands[keep]
    ei = ei_from_moments(posterior_v(fit_for_ei, cands, 0.0), baseline)
    top = ei.max()
    tol = 1e-12 * max(1.0, abs(top))
    i = int(np.flatnonzero(ei >= top - tol)[0])
    best, best_ei = cands[i], float(ei[i])

    if config.refine and best_ei > 0:
        lo, hi = bounds[:, 0], bounds[:, 1]

        def neg_ei(p):
            p = np.clip(p, lo, hi)
            return -float(ei_from_moments(posterior_v(fit_for_ei, p[None, :], 0.0), baseline)[0])

        step = (hi - lo) / (_per_dim(len(lo), config.candidates_per_dim) - 1)
        simplex = np.vstack([best] + [best + np.eye(len(lo))[k] * step[k] for k in range(len(lo))])
        res = minimize(neg_ei, best, method="Nelder-Mead", bounds=list(map(tuple, bounds)),
                       options={"initial_simplex": np.clip(simplex, lo, hi), "xatol": 1e-6 * float(np.max(hi - lo)),
                                "fatol": 1e-12, "maxiter": 200})
        cand = np.clip(res.x, lo, hi)
        if -res.fun > best_ei and not _excluded(cube.to_unit(cand[None, :]), taken_u, config.min_distance)[0]:
            best, best_ei = cand, float(-res.fun)
    return (best, best_ei) if return_ei else best


def _incumbent(fit: GpFit, eval_grid):
    mu = posterior_f(fit, eval_grid).mean
    top = mu.max()
    i = int(np.flatnonzero(mu >= top - 1e-12 * max(1.0, abs(top)))[0])
    return tuple(float(v) for v in eval_grid[i]), float(mu[i])


def _evaluate(evaluator, psi):
    try:
        v = float(evaluator(psi))
    except DtrGpError:
        return None
    return v if math.isfinite(v) else None


def run_bo(evaluator, initial_design, config: BoConfig, rng=None, *, bounds=None, eval_grid=None,
           checkpoints=(), keep_fits=False) -> BoTrace:
    """Run a budgeted sequential design.

    Parameters
    ----------
    evaluator : callable
        Maps a regime index (1-D array) to an estimated value. May raise a
        package error (e.g. :class:`~dtrgp.errors.NoAdherentPatients`) or
        return a non-finite value; the point is then recorded as failed and
        one alternative proposal is tried in the same iteration.
    initial_design : Design or array_like
        Either evaluated design data or bare points to be evaluated first.
    bounds : array_like, shape (D, 2)
        Index box. Defaults to the bounding box of the initial points.
    eval_grid : array_like, optional
        Grid over which the incumbent (posterior-mean argmax) is located.
        Defaults to the EI candidate grid.
    checkpoints : iterable of int
        Numbers of accepted infills at which to store the incumbent (and the
        fit, when ``keep_fits``).
    """
    rng = np.random.default_rng(rng)
    failed = []
    if isinstance(initial_design, Design):
        design = initial_design
        n_evals = 0
    else:
        pts = np.atleast_2d(np.asarray(initial_design, dtype=float))
        if pts.shape[0] == 1 and bounds is not None and np.atleast_2d(bounds).shape[0] > 1:
            pts = pts.reshape(-1, np.atleast_2d(bounds).shape[0])
        keep_pts, vals = [], []
        for p in pts:
            v = _evaluate(evaluator, p)
            if v is None:
                failed.append(tuple(float(a) for a in p))
            else:
                keep_pts.append(p)
                vals.append(v)
        n_evals = len(pts)
        if not keep_pts:
            raise DtrGpError("every initial design point failed to evaluate")
        design = Design(np.array(keep_pts), np.array(vals))
    if bounds is None:
        bounds = np.column_stack([design.points.min(0), design.points.max(0)])
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    grid = candidate_grid(bounds, config.candidates_per_dim) if eval_grid is None else \
        np.asarray(eval_grid, dtype=float).reshape(-1, bounds.shape[0])
    checkpoints = {int(c) for c in checkpoints}

    entries = []
    stored, fits = {}, {}
    accepted = 0
    low_ei = 0
    stopped = False
    warm = None
    it = 0
    while True:
        seed = int(rng.integers(2**31 - 1))
        fit = fit_surrogate(design, config, bounds, seed=seed, warm_start=warm)
        if "params" in fit.diagnostics:
            warm = fit.diagnostics.get("hm_params", fit.diagnostics["params"])
        inc_psi, inc_val = _incumbent(fit, grid)
        if it == 0:
            for p, v, t in zip(design.points, design.values, design.tags):
                entries.append(TraceEntry(0, tuple(map(float, p)), float(v), float("nan"), inc_psi, inc_val, t))
        else:
            last = entries[-1]
            entries[-1] = TraceEntry(last.iteration, last.psi, last.value, last.max_ei, inc_psi, inc_val, last.tag)
        if accepted in checkpoints:
            stored[accepted] = (inc_psi, inc_val)
            if keep_fits:
                fits[accepted] = fit
        if accepted >= config.budget or it >= 2 * config.budget + 1 or stopped:
            break
        it += 1
        ei_fit = reinterpolate(fit)
        baseline = baseline_value(ei_fit, design, config.baseline_mode)
        proposal = None
        for _attempt in range(2):
            try:
                psi, max_ei = propose_next(ei_fit, design, config, bounds, exclude=failed, baseline=baseline,
                                           return_ei=True)
            except SaturationError:
                stopped = True
                break
            v = _evaluate(evaluator, psi)
            n_evals += 1
            if v is None:
                failed.append(tuple(map(float, psi)))
                continue
            proposal = (psi, v, max_ei)
            break
        if proposal is None:
            continue
        psi, v, max_ei = proposal
        design = design.append(psi, v, "infill")
        accepted += 1
        entries.append(TraceEntry(it, tuple(map(float, psi)), v, max_ei, inc_psi, inc_val, "infill"))
        if config.ei_tol is not None:
            low_ei = low_ei + 1 if max_ei < config.ei_tol else 0
            if low_ei >= config.ei_patience:
                stopped = True
    return BoTrace(tuple(entries), tuple(failed), design, stored, fits, n_evals, stopped)


__all__ = [
    "GP_TYPES",
    "OBSERVED_MAX",
    "REINTERPOLATED_MAX",
    "BoConfig",
    "BoTrace",
    "TraceEntry",
    "candidate_grid",
    "ei_from_moments",
    "expected_improvement",
    "fit_surrogate",
    "propose_next",
    "reinterpolate",
    "run_bo",
]
