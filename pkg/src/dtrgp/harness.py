"""Baselines, Monte Carlo replicate orchestration and summary tables."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .bo import BoConfig, run_bo
from .dtr import ValueEstimator, estimation_surface, fit_propensity
from .errors import DtrGpError, ReplicateFailureError
from .scenarios import (
    SIM1_BOUNDS,
    SIM2_BOUNDS,
    ScenarioSpec,
    family_for,
    generate_cohort,
    known_propensity,
    sim1_true_value,
    true_value,
)

METHODS = ("grid", "msm", "int", "hm", "he")
BO_METHODS = ("int", "hm", "he")
CHECKPOINTS = (1, 5, 10, 15, 20, 25)
FAILURE_BUDGET = 0.10
TIE_RTOL = 1e-12  # relative to |max|: absorbs summation-order rounding only


# ---------------------------------------------------------------- grids


def _axis(lo, hi, step):
    n = math.floor((hi - lo) / step + 1e-9) + 1
    return np.round(lo + step * np.arange(n), 10)


def product_grid(axes) -> np.ndarray:
    """Cartesian product of 1-D axes in lexicographic order."""
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def search_grid(scenario_id: str) -> np.ndarray:
    """Grid-search points: 0.01 steps on [-1.5, 1.5) for sim1, 0.05 steps on [-2.25, 1.8]^2 for sim2."""
    if scenario_id == "sim1":
        return _axis(-1.5, 1.49, 0.01)[:, None]
    ax = _axis(-2.25, 1.8, 0.05)
    return product_grid([ax, ax])


def evaluation_grid(scenario_id: str) -> np.ndarray:
    """Grid on which the emulator's maximizer is located."""
    if scenario_id == "sim1":
        return _axis(-1.5, 1.5, 0.01)[:, None]
    ax = _axis(-2.25, 1.8, 0.05)
    return product_grid([ax, ax])


def initial_design(scenario_id: str) -> np.ndarray:
    """Equally spaced starting points: 13 for sim1, a 4 x 4 lattice for sim2."""
    if scenario_id == "sim1":
        return _axis(-1.5, 1.5, 0.25)[:, None]
    ax = np.linspace(-2.25, 1.8, 4)
    return product_grid([ax, ax])


def scenario_bounds(scenario_id: str) -> np.ndarray:
    return SIM1_BOUNDS if scenario_id == "sim1" else SIM2_BOUNDS


# ---------------------------------------------------------------- baselines


@dataclass(frozen=True)
class GridResult:
    psi: np.ndarray
    value: float
    n_evaluations: int
    n_missing: int


def _lexicographic_order(points):
    return np.lexsort(points.T[::-1])


def grid_search(surface, grid) -> GridResult:
    """Argmax of a surface over a grid.

    ``surface`` is either a callable ``psi -> value`` or an array of values
    aligned with ``grid``; NaN marks a missing point. Ties go to the
    lexicographically smallest point.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    if len(grid) == 0:
        raise ValueError("grid is empty")
    if callable(surface):
        values = np.empty(len(grid))
        for j, psi in enumerate(grid):
            try:
                values[j] = float(surface(psi))
            except DtrGpError:
                values[j] = np.nan
    else:
        values = np.asarray(surface, dtype=float).ravel()
        if len(values) != len(grid):
            raise ValueError("surface values and grid differ in length")
    ok = np.isfinite(values)
    if not np.any(ok):
        raise DtrGpError("every grid point is missing")
    order = _lexicographic_order(grid)
    v = values[order]
    top = np.nanmax(v)
    i = order[int(np.flatnonzero(np.isfinite(v) & (v >= top - TIE_RTOL * abs(top)))[0])]
    return GridResult(grid[i].copy(), float(values[i]), len(grid), int(np.sum(~ok)))


def quadratic_features(points) -> np.ndarray:
    """Full quadratic basis: 1, then (psi_d, psi_d^2) per dimension, then pairwise products."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    cols = [np.ones(len(P))]
    for d in range(P.shape[1]):
        cols += [P[:, d], P[:, d] ** 2]
    for a in range(P.shape[1]):
        for b in range(a + 1, P.shape[1]):
            cols.append(P[:, a] * P[:, b])
    return np.column_stack(cols)


def _quadratic_parts(beta, D):
    """Gradient vector ``b`` and Hessian ``H`` of the fitted quadratic (value = c + b.x + x'Hx/2)."""
    b = np.array([beta[1 + 2 * d] for d in range(D)])
    H = np.diag([2.0 * beta[2 + 2 * d] for d in range(D)])
    k = 1 + 2 * D
    for a in range(D):
        for c in range(a + 1, D):
            H[a, c] = H[c, a] = beta[k]
            k += 1
    return beta[0], b, H


def _box_maximizer(beta, bounds):
    """Exact maximizer of a quadratic over a box of dimension 1 or 2."""
    bounds = np.atleast_2d(bounds)
    D = bounds.shape[0]
    _, b, H = _quadratic_parts(beta, D)
    f = lambda x: float((quadratic_features(x[None, :]) @ beta)[0])
    cands = []
    if np.all(np.linalg.eigvalsh(H) < 0):
        x = np.linalg.solve(H, -b)
        if np.all(x >= bounds[:, 0]) and np.all(x <= bounds[:, 1]):
            cands.append(x)
    if D > 2:
        raise NotImplementedError("box maximization is implemented for one or two dimensions")
    cands.extend(product_grid([bounds[d] for d in range(D)]))
    if D == 2:
        # stationary point along each edge
        for fixed in range(2):
            free = 1 - fixed
            for val in bounds[fixed]:
                if H[free, free] < 0:
                    t = -(b[free] + H[free, fixed] * val) / H[free, free]
                    if bounds[free, 0] <= t <= bounds[free, 1]:
                        x = np.empty(2)
                        x[fixed], x[free] = val, t
                        cands.append(x)
    cands = np.array(cands)
    vals = np.array([f(x) for x in cands])
    order = _lexicographic_order(cands)
    top = vals.max()
    i = order[int(np.flatnonzero(vals[order] >= top - TIE_RTOL * abs(top))[0])]
    return cands[i], float(vals[i])


@dataclass(frozen=True)
class MsmResult:
    coefficients: np.ndarray
    psi: np.ndarray
    value: float


def msm_baseline(points, values, bounds) -> MsmResult:
    """Least-squares quadratic model of the value and its maximizer over ``bounds``.

    Missing (NaN) values are dropped before fitting.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    v = np.asarray(values, dtype=float).ravel()
    ok = np.isfinite(v)
    X = quadratic_features(P[ok])
    if X.shape[0] < X.shape[1] or np.linalg.matrix_rank(X) < X.shape[1]:
        raise DtrGpError(f"quadratic design matrix is rank deficient ({X.shape[0]} samples, {X.shape[1]} features)")
    beta, *_ = np.linalg.lstsq(X, v[ok], rcond=None)
    psi, val = _box_maximizer(beta, bounds)
    return MsmResult(beta, psi, val)


# ---------------------------------------------------------------- replicates


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings of a Monte Carlo study on one scenario."""

    scenario: str = "sim1"
    n: int = 500
    replicates: int = 100
    methods: tuple = ("hm",)
    budget: int = 25
    checkpoints: tuple = CHECKPOINTS
    noise_variant: str = "paper"
    family: str = "matern52"
    known_propensity: bool = False
    seed: int = 0
    n_starts: int = 8
    true_value_draws: int = 0

    def __post_init__(self):
        ScenarioSpec(self.scenario, self.n, self.noise_variant)
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValueError(f"unknown methods {bad}; valid methods: {', '.join(METHODS)}")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.budget < 0:
            raise ValueError("budget must be nonnegative")


@dataclass(frozen=True)
class CheckpointRecord:
    checkpoint: int | None
    psi: tuple
    value: float
    true_value: float = float("nan")


@dataclass(frozen=True)
class ReplicateResult:
    """Outcome of one method on one replicate.

    ``checkpoint`` is ``None`` for the grid and MSM baselines, otherwise the
    number of infill points added.
    """

    replicate: int
    method: str
    seed: int
    records: tuple = ()
    n_evaluations: int = 0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def child_seeds(master: int, R: int) -> list[int]:
    """Independent per-replicate seeds derived from ``master``."""
    return [int(s.generate_state(1, dtype=np.uint32)[0]) for s in np.random.SeedSequence(master).spawn(R)]


def _oracle(scenario, psi, draws):
    if scenario == "sim1":
        return float(sim1_true_value(psi[0]))
    if draws > 0:
        return true_value(scenario, psi, n_draws=draws)[0]
    return float("nan")


def run_replicate(config: ExperimentConfig, r: int, seed: int) -> list[ReplicateResult]:
    """All configured methods on replicate ``r``."""
    sid = config.scenario
    try:
        cohort = generate_cohort(ScenarioSpec(sid, config.n, config.noise_variant, seed))
        prop = known_propensity(sid) if config.known_propensity else fit_propensity(cohort)
    except DtrGpError as exc:
        return [ReplicateResult(r, m, seed, error=f"{type(exc).__name__}: {exc}") for m in config.methods]
    family = family_for(sid)
    bounds = scenario_bounds(sid)
    out = []
    surface = None
    for method in config.methods:
        try:
            if method in ("grid", "msm"):
                grid = search_grid(sid)
                if surface is None:
                    surface = estimation_surface(cohort, family, grid, prop)
                if method == "grid":
                    g = grid_search(surface, grid)
                    psi, val = g.psi, g.value
                else:
                    msm = msm_baseline(grid, surface, bounds)
                    psi, val = msm.psi, msm.value
                rec = CheckpointRecord(None, tuple(map(float, psi)), val,
                                       _oracle(sid, psi, config.true_value_draws))
                out.append(ReplicateResult(r, method, seed, (rec,), len(grid)))
                continue
            est = ValueEstimator(cohort, family, prop)
            bo_cfg = BoConfig(gp_type=method, family=config.family, budget=config.budget, n_starts=config.n_starts)
            cps = tuple(c for c in config.checkpoints if c <= config.budget)
            trace = run_bo(est, initial_design(sid), bo_cfg, rng=seed, bounds=bounds,
                           eval_grid=evaluation_grid(sid), checkpoints=cps)
            recs = tuple(
                CheckpointRecord(c, tuple(trace.checkpoints[c][0]), trace.checkpoints[c][1],
                                 _oracle(sid, trace.checkpoints[c][0], config.true_value_draws))
                for c in cps if c in trace.checkpoints
            )
            out.append(ReplicateResult(r, method, seed, recs, est.n_calls))
        except (DtrGpError, np.linalg.LinAlgError) as exc:
            out.append(ReplicateResult(r, method, seed, error=f"{type(exc).__name__}: {exc}"))
    return out


def _replicate_task(args):
    return run_replicate(*args)


def run_replicates(config: ExperimentConfig, workers: int | None = 1) -> list[ReplicateResult]:
    """Run ``config.replicates`` independent replicates.

    Replicate ``r`` draws its cohort and all fitting randomness from the
    ``r``-th child of ``SeedSequence(config.seed)``, so results do not depend
    on ``workers``. Raises :class:`ReplicateFailureError` if more than 10% of
    replicate-method runs fail; individual failures are kept in the results.
    """
    seeds = child_seeds(config.seed, config.replicates)
    tasks = [(config, r, s) for r, s in enumerate(seeds)]
    if workers is None or workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            nested = list(pool.map(_replicate_task, tasks))
    else:
        nested = [_replicate_task(t) for t in tasks]
    results = [res for group in nested for res in group]
    n_fail = sum(not res.ok for res in results)
    if n_fail > FAILURE_BUDGET * len(results):
        raise ReplicateFailureError(f"{n_fail} of {len(results)} replicate runs failed")
    return results


# ---------------------------------------------------------------- summaries


@dataclass(frozen=True)
class SummaryStats:
    method: str
    checkpoint: int | None
    parameter: str
    n: int
    mean: float
    sd: float
    median: float
    iqr: float


def describe(values) -> tuple:
    """(mean, sd, median, iqr) with ``ddof=1`` and linearly interpolated quartiles."""
    v = np.asarray(values, dtype=float)
    sd = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    q1, med, q3 = np.percentile(v, [25, 50, 75], method="linear")
    return float(np.mean(v)), sd, float(med), float(q3 - q1)


def summarize(results) -> list[SummaryStats]:
    """Per method, checkpoint and parameter statistics over successful replicates.

    Parameters are ``psi_1 .. psi_D``, ``value`` (the method's own estimate
    at its optimum) and, when available, ``true_value``.
    """
    groups: dict = {}
    for res in results:
        if not res.ok:
            continue
        for rec in res.records:
            key = (res.method, rec.checkpoint)
            groups.setdefault(key, []).append(rec)
    if not groups:
        raise ValueError("no successful results to summarize")
    order = {m: i for i, m in enumerate(METHODS)}
    out = []
    for (method, cp) in sorted(groups, key=lambda k: (order.get(k[0], 99), -1 if k[1] is None else k[1])):
        recs = groups[(method, cp)]
        cols = {f"psi_{d + 1}": [r.psi[d] for r in recs] for d in range(len(recs[0].psi))}
        cols["value"] = [r.value for r in recs]
        tv = [r.true_value for r in recs]
        if np.all(np.isfinite(tv)):
            cols["true_value"] = tv
        for name, vals in cols.items():
            out.append(SummaryStats(method, cp, name, len(vals), *describe(vals)))
    return out


def summary_lookup(stats, method, checkpoint, parameter) -> SummaryStats:
    for s in stats:
        if s.method == method and s.checkpoint == checkpoint and s.parameter == parameter:
            return s
    raise KeyError((method, checkpoint, parameter))


# ---------------------------------------------------------------- output

REPLICATE_COLUMNS = ("replicate", "method", "seed", "checkpoint", "psi", "value", "true_value",
                     "n_evaluations", "error")
SUMMARY_COLUMNS = ("method", "checkpoint", "parameter", "n", "mean", "sd", "median", "iqr")


def _cp(cp):
    return "" if cp is None else cp


def write_replicates_csv(path, results) -> None:
    """One row per replicate, method and checkpoint; ``psi`` is ``;``-separated."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REPLICATE_COLUMNS)
        for res in results:
            if not res.ok:
                w.writerow([res.replicate, res.method, res.seed, "", "", "", "", res.n_evaluations, res.error])
                continue
            for rec in res.records:
                w.writerow([res.replicate, res.method, res.seed, _cp(rec.checkpoint),
                            ";".join(repr(p) for p in rec.psi), repr(rec.value), repr(rec.true_value),
                            res.n_evaluations, ""])


def write_summary_csv(path, stats) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for s in stats:
            w.writerow([s.method, _cp(s.checkpoint), s.parameter, s.n,
                        repr(s.mean), repr(s.sd), repr(s.median), repr(s.iqr)])


def results_to_json(results) -> list:
    return [asdict(r) for r in results]


def write_summary_json(path, stats) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([asdict(s) for s in stats], fh, indent=2)


__all__ = [
    "CHECKPOINTS",
    "METHODS",
    "CheckpointRecord",
    "ExperimentConfig",
    "GridResult",
    "MsmResult",
    "ReplicateResult",
    "SummaryStats",
    "child_seeds",
    "describe",
    "evaluation_grid",
    "grid_search",
    "initial_design",
    "msm_baseline",
    "product_grid",
    "quadratic_features",
    "results_to_json",
    "run_replicate",
    "run_replicates",
    "search_grid",
    "summarize",
    "summary_lookup",
    "write_replicates_csv",
    "write_summary_csv",
    "write_summary_json",
]
