"""Two-arm trial analysis: CSV ingestion, bootstrap baselines and optimizer uncertainty.

The regime family is "give the treated-arm therapy iff weight > psi_W and
CD4 > psi_CD4". Uncertainty about the optimal thresholds combines sampling
variability (Bayesian bootstrap over patients) with emulator uncertainty
(posterior sample paths of the fitted GP).
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bo import BoConfig, run_bo
from .dtr import (
    P_MIN,
    Cohort,
    JointThreshold,
    ValueEstimator,
    bayesian_bootstrap_weights,
    estimation_surface,
    fit_propensity,
    history_features,
)
from .errors import DtrGpError, RowError, SchemaError
from .gp import sample_posterior_paths
from .harness import _axis, grid_search, msm_baseline, product_grid

DEFAULT_BOUNDS = ((50.0, 100.0), (200.0, 600.0))


@dataclass(frozen=True)
class CsvSchema:
    """Column names and arm codes of a two-arm trial file.

    Defaults follow the conventional names of the public trial dataset:
    arm ``1`` (the treated therapy, coded z = 1) against arm ``2`` (z = 0).
    """

    id: str = "pidnum"
    arm: str = "arms"
    weight: str = "wtkg"
    cd4: str = "cd40"
    outcome: str = "cd420"
    treated_arm: str = "1"
    control_arm: str = "2"
    covariates: tuple = ()

    def __post_init__(self):
        if str(self.treated_arm) == str(self.control_arm):
            raise ValueError("treated and control arm codes must differ")

    @property
    def required(self) -> tuple:
        return (self.id, self.arm, self.weight, self.cd4, self.outcome) + tuple(self.covariates)


def _parse_number(text, column, line):
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise RowError(f"line {line}: column {column!r} value {text!r} is not a number", line=line) from None
    if not math.isfinite(v):
        raise RowError(f"line {line}: column {column!r} value {text!r} is not finite", line=line)
    return v


def _arm_code(text):
    text = text.strip()
    try:
        v = float(text)
    except ValueError:
        return text
    return str(int(v)) if v.is_integer() else text


def load_cohort_csv(path, schema: CsvSchema | None = None) -> Cohort:
    """Read a trial CSV into a single-stage cohort.

    Only the two configured arms are kept. Stage covariates are
    ``(weight, cd4, *schema.covariates)``, treatment is 1 for the treated arm
    and the outcome is the follow-up CD4 count.
    """
    schema = schema or CsvSchema()
    treated, control = _arm_code(str(schema.treated_arm)), _arm_code(str(schema.control_arm))
    rows_x, rows_z, rows_y = [], [], []
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError("file is empty; a header row is required", column=None) from None
        for col in schema.required:
            if col not in header:
                raise SchemaError(f"required column {col!r} is missing", column=col)
        pos = {c: header.index(c) for c in schema.required}
        xcols = (schema.weight, schema.cd4) + tuple(schema.covariates)
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise RowError(f"line {line}: expected {len(header)} fields, found {len(row)}", line=line)
            arm = _arm_code(row[pos[schema.arm]])
            if arm not in (treated, control):
                continue
            rows_x.append([_parse_number(row[pos[c]], c, line) for c in xcols])
            rows_y.append(_parse_number(row[pos[schema.outcome]], schema.outcome, line))
            rows_z.append(1 if arm == treated else 0)
    if not rows_y:
        raise SchemaError(f"no rows with arm codes {treated!r} or {control!r}", column=schema.arm)
    x = np.asarray(rows_x)[:, None, :]
    return Cohort(x, np.asarray(rows_z)[:, None], np.asarray(rows_y))


def threshold_family(bounds=DEFAULT_BOUNDS) -> JointThreshold:
    """Treat iff weight > psi_W and CD4 > psi_CD4."""
    return JointThreshold(np.asarray(bounds, dtype=float), covariates=(0, 1))


def trial_features(cohort: Cohort, t: int) -> np.ndarray:
    """Propensity features: intercept, weight and CD4 (plus any extra covariates)."""
    return history_features(cohort, t)


# ---------------------------------------------------------------- grids


def lattice(bounds, steps) -> np.ndarray:
    """Points from each lower bound upward in ``steps`` without passing the upper bound."""
    bounds = np.asarray(bounds, dtype=float)
    return product_grid([_axis(lo, hi, s) for (lo, hi), s in zip(bounds, steps)])


def coarse_grid(bounds=DEFAULT_BOUNDS):
    return lattice(bounds, (15.0, 35.0))


def fine_grid(bounds=DEFAULT_BOUNDS):
    return lattice(bounds, (10.0, 20.0))


def design_grid(bounds=DEFAULT_BOUNDS, steps=(15.0, 125.0)):
    return lattice(bounds, steps)


# ---------------------------------------------------------------- uncertainty


@dataclass(frozen=True)
class UncertaintyConfig:
    """Settings of the bootstrap-and-paths uncertainty analysis.

    With ``B == 1`` the bootstrap is disabled and the single draw uses the
    cohort's own (uniform) weights. ``pooled`` pools the ``B * N`` path
    maximizers; otherwise each draw is reduced to its median first.
    """

    B: int = 500
    N: int = 250
    path_steps: tuple = (4.0, 7.5)
    design_steps: tuple = (15.0, 125.0)
    checkpoints: tuple = (1, 5, 15, 25)
    gp_type: str = "hm"
    family: str = "matern52"
    bounds: tuple = DEFAULT_BOUNDS
    pooled: bool = True
    p_min: float = P_MIN
    n_starts: int = 8

    def __post_init__(self):
        if self.B < 1 or self.N < 1:
            raise ValueError("B and N must be at least 1")
        BoConfig(gp_type=self.gp_type, family=self.family)

    @property
    def budget(self) -> int:
        return max(self.checkpoints) if self.checkpoints else 0


@dataclass(frozen=True)
class DrawResult:
    """Path maximizers of one bootstrap draw, keyed by checkpoint."""

    draw: int
    seed: int
    argmax: dict = field(default_factory=dict)
    maxima: dict = field(default_factory=dict)
    error: str | None = None


@dataclass(frozen=True)
class Interval:
    median: float
    lower: float
    upper: float

    def format(self, digits: int = 1) -> str:
        f = lambda v: f"{v:.{digits}f}".rstrip("0").rstrip(".") if digits else f"{v:.0f}"
        return f"{f(self.median)} ({f(self.lower)}–{f(self.upper)})"


def interval(values, level: float = 0.95) -> Interval:
    v = np.asarray(values, dtype=float)
    a = (1 - level) / 2
    lo, med, hi = np.percentile(v, [100 * a, 50, 100 * (1 - a)], method="linear")
    return Interval(float(med), float(lo), float(hi))


def _draw_weights(n, B, rng):
    return np.full(n, 1.0 / n) if B == 1 else bayesian_bootstrap_weights(n, rng)


def _uncertainty_draw(args):
    cohort, family, config, b, seed = args
    rng = np.random.default_rng(seed)
    try:
        w = _draw_weights(cohort.n, config.B, rng)
        prop = fit_propensity(cohort, trial_features, p_min=config.p_min, weights=w)
        est = ValueEstimator(cohort, family, prop, weights=w)
        bounds = np.asarray(config.bounds, dtype=float)
        grid = lattice(bounds, config.path_steps)
        bo_cfg = BoConfig(gp_type=config.gp_type, family=config.family, budget=config.budget,
                          n_starts=config.n_starts)
        trace = run_bo(est, design_grid(bounds, config.design_steps), bo_cfg, rng=rng, bounds=bounds,
                       eval_grid=grid, checkpoints=config.checkpoints, keep_fits=True)
        argmax, maxima = {}, {}
        for c in config.checkpoints:
            if c not in trace.fits:
                continue
            paths = sample_posterior_paths(trace.fits[c], grid, config.N, rng)
            idx = np.argmax(paths, axis=1)
            argmax[c] = grid[idx]
            maxima[c] = paths[np.arange(len(idx)), idx]
        return DrawResult(b, seed, argmax, maxima)
    except (DtrGpError, np.linalg.LinAlgError) as exc:
        return DrawResult(b, seed, error=f"{type(exc).__name__}: {exc}")


def _draw_seeds(seed, B):
    return [int(s.generate_state(1, dtype=np.uint32)[0]) for s in np.random.SeedSequence(seed).spawn(B)]


def optimizer_uncertainty(cohort: Cohort, family, config: UncertaintyConfig, seed: int = 0,
                          workers: int | None = 1):
    """Distribution of the optimal thresholds under sampling and emulator uncertainty.

    For each of ``config.B`` Bayesian-bootstrap draws: reweight the cohort,
    refit the propensity model with the weights, run the sequential design
    to each checkpoint, draw ``config.N`` posterior paths of the latent
    surface on the path grid and record each path's maximizer and maximum.

    Returns
    -------
    summary : dict
        ``{checkpoint: {"psi_W": Interval, "psi_CD4": Interval, "value": Interval}}``
        over successful draws.
    draws : list of DrawResult
    """
    seeds = _draw_seeds(seed, config.B)
    tasks = [(cohort, family, config, b, s) for b, s in enumerate(seeds)]
    if workers is None or workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            draws = list(pool.map(_uncertainty_draw, tasks))
    else:
        draws = [_uncertainty_draw(t) for t in tasks]
    return summarize_draws(draws, config), draws


def summarize_draws(draws, config: UncertaintyConfig) -> dict:
    ok = [d for d in draws if d.error is None]
    if not ok:
        raise DtrGpError("every bootstrap draw failed")
    out = {}
    for c in config.checkpoints:
        got = [d for d in ok if c in d.argmax]
        if not got:
            continue
        if config.pooled:
            am = np.vstack([d.argmax[c] for d in got])
            mx = np.concatenate([d.maxima[c] for d in got])
        else:
            am = np.array([np.median(d.argmax[c], axis=0) for d in got])
            mx = np.array([np.median(d.maxima[c]) for d in got])
        out[c] = {"psi_W": interval(am[:, 0]), "psi_CD4": interval(am[:, 1]), "value": interval(mx)}
    return out


# ---------------------------------------------------------------- baselines


def _baseline_draw(args):
    cohort, family, grids, B, p_min, b, seed = args
    rng = np.random.default_rng(seed)
    try:
        w = _draw_weights(cohort.n, B, rng)
        prop = fit_propensity(cohort, trial_features, p_min=p_min, weights=w)
        out = {}
        for name, grid in grids.items():
            surface = estimation_surface(cohort, family, grid, prop, weights=w)
            if name.startswith("msm"):
                r = msm_baseline(grid, surface, family.bounds)
            else:
                r = grid_search(surface, grid)
            out[name] = (tuple(map(float, r.psi)), float(r.value))
        return b, seed, out, None
    except (DtrGpError, np.linalg.LinAlgError) as exc:
        return b, seed, {}, f"{type(exc).__name__}: {exc}"


def bootstrap_baselines(cohort: Cohort, family, B: int = 500, seed: int = 0, grids=None,
                        p_min: float = P_MIN, workers: int | None = 1):
    """Bayesian-bootstrap distribution of grid-search and quadratic-MSM optima.

    ``grids`` maps a label to grid points; labels starting with ``"msm"``
    fit the quadratic model on that grid's surface instead of taking its
    argmax. Defaults: coarse grid, fine grid and MSM on the fine grid.

    Returns ``(summary, draws)`` with ``summary[label]`` a dict of
    :class:`Interval` for ``psi_W``, ``psi_CD4`` and ``value``.
    """
    if grids is None:
        grids = {"coarse": coarse_grid(family.bounds), "fine": fine_grid(family.bounds),
                 "msm": fine_grid(family.bounds)}
    seeds = _draw_seeds(seed, B)
    tasks = [(cohort, family, grids, B, p_min, b, s) for b, s in enumerate(seeds)]
    if workers is None or workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            draws = list(pool.map(_baseline_draw, tasks))
    else:
        draws = [_baseline_draw(t) for t in tasks]
    ok = [d for d in draws if d[3] is None]
    if not ok:
        raise DtrGpError("every bootstrap draw failed")
    summary = {}
    for name in grids:
        psi = np.array([d[2][name][0] for d in ok])
        val = np.array([d[2][name][1] for d in ok])
        summary[name] = {"psi_W": interval(psi[:, 0]), "psi_CD4": interval(psi[:, 1]), "value": interval(val)}
    return summary, draws


# ---------------------------------------------------------------- tables

ROW_LABELS = {"psi_W": "psi_W", "psi_CD4": "psi_CD4", "value": "value"}


def format_table(summary: dict, digits: int = 1) -> list[list[str]]:
    """Rows ``psi_W``, ``psi_CD4``, ``value``; one column per checkpoint (or baseline label).

    Entries read ``"median (lo–hi)"``.
    """
    cols = list(summary)
    header = ["parameter"] + [f"+{c}" if isinstance(c, int) else str(c) for c in cols]
    rows = [header]
    for key, label in ROW_LABELS.items():
        rows.append([label] + [summary[c][key].format(digits) for c in cols])
    return rows


def write_table_csv(path, table) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(table)


# ---------------------------------------------------------------- synthetic data


def simulate_trial(n: int = 1000, seed: int = 0, optimum=(80.0, 350.0), effect: float = 40.0,
                   noise_sd: float = 60.0) -> Cohort:
    """Synthetic two-arm trial with a known optimal threshold pair.

    Weight ~ U(50, 100), CD4 ~ U(200, 600), randomized 1:1 treatment. The
    treated therapy adds ``effect`` when weight > ``optimum[0]`` and
    CD4 > ``optimum[1]`` and subtracts it otherwise, so the threshold rule at
    ``optimum`` is the best in the family. Not a model of any real trial.
    """
    rng = np.random.default_rng(seed)
    w = rng.uniform(50, 100, n)
    c = rng.uniform(200, 600, n)
    z = rng.integers(0, 2, n)
    good = (w > optimum[0]) & (c > optimum[1])
    y = 300 + 0.5 * (c - 400) + z * np.where(good, effect, -effect) + noise_sd * rng.standard_normal(n)
    return Cohort(np.column_stack([w, c])[:, None, :], z[:, None], y)


def simulated_trial_value(psi, optimum=(80.0, 350.0), effect: float = 40.0) -> float:
    """Exact value of the threshold rule ``psi`` under :func:`simulate_trial`."""
    pw, pc = (float(v) for v in psi)
    ow, oc = optimum
    # probability mass of the treated rectangle inside / outside the benefit region
    area = lambda w0, c0: max(0.0, 100 - w0) / 50 * max(0.0, 600 - c0) / 400
    p_treated = area(pw, pc)
    p_good = area(max(pw, ow), max(pc, oc))
    return 300.0 + effect * (2 * p_good - p_treated)


__all__ = [
    "DEFAULT_BOUNDS",
    "CsvSchema",
    "DrawResult",
    "Interval",
    "UncertaintyConfig",
    "bootstrap_baselines",
    "coarse_grid",
    "design_grid",
    "fine_grid",
    "format_table",
    "interval",
    "lattice",
    "load_cohort_csv",
    "optimizer_uncertainty",
    "simulate_trial",
    "simulated_trial_value",
    "summarize_draws",
    "threshold_family",
    "trial_features",
    "write_table_csv",
]
