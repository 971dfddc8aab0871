"""Command-line entry point: ``dtrgp <subcommand> [options]``.

Every run writes its tables plus ``run_record.json`` (resolved settings,
seeds and results) to the output directory. A run record, or a flat TOML
file whose keys mirror the long option names, can be passed back with
``--config``; options given on the command line win.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .bo import GP_TYPES, BoConfig, run_bo
from .dtr import ValueEstimator, estimation_surface, fit_propensity
from .errors import DtrGpError
from .harness import (
    METHODS,
    ExperimentConfig,
    evaluation_grid,
    grid_search,
    initial_design,
    results_to_json,
    run_replicates,
    scenario_bounds,
    search_grid,
    summarize,
    write_replicates_csv,
    write_summary_csv,
    write_summary_json,
)
from .kernels import FAMILIES
from .scenarios import (
    NOISE_VARIANTS,
    SCENARIOS,
    ScenarioSpec,
    family_for,
    generate_cohort,
    known_propensity,
    true_value,
)

OUTPUT_ENV = "DTRGP_OUTPUT_DIR"
DEFAULT_OUTPUT = "dtrgp-output"

try:  # Python >= 3.11
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as _toml


def _csv_list(text):
    return tuple(s.strip() for s in str(text).split(",") if s.strip())


def _int_list(text):
    return tuple(int(s) for s in _csv_list(text))


def _float_list(text):
    return tuple(float(s) for s in _csv_list(text))


def _methods(text):
    out = tuple(m.lower() for m in _csv_list(text))
    bad = [m for m in out if m not in METHODS]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"invalid method(s) {bad}; valid methods: {', '.join(METHODS)}")
    return out


def _common(p, scenario=True):
    p.add_argument("--config", help="TOML file or earlier run_record.json supplying option values")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
    if scenario:
        p.add_argument("--scenario", choices=SCENARIOS, default="sim1")
        p.add_argument("--n", type=int, default=500, help="cohort size")
        p.add_argument("--noise", choices=NOISE_VARIANTS, default="paper", help="noise variant")
        p.add_argument("--known-propensity", action="store_true",
                       help="weight by the true treatment probabilities instead of fitted ones")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dtrgp",
        description="Gaussian-process optimization of treatment-regime value surfaces.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{simulate,grid,bo,case-study,oracle}")
    sub.required = True

    p = sub.add_parser("simulate", help="Monte Carlo replicate study on a simulation scenario")
    _common(p)
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--methods", type=_methods, default=("hm",), help=f"comma list from {', '.join(METHODS)}")
    p.add_argument("--budget", type=int, default=25)
    p.add_argument("--checkpoints", type=_int_list, default=(1, 5, 10, 15, 20, 25))
    p.add_argument("--kernel", choices=FAMILIES, default="matern52")
    p.add_argument("--n-starts", type=int, default=8, help="multi-start count of hyperparameter searches")
    p.add_argument("--true-value-draws", type=int, default=0,
                   help="Monte Carlo draws for the true value of each sim2 optimum (0 = skip)")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: all cores)")

    p = sub.add_parser("grid", help="grid-search baseline on one simulated cohort")
    _common(p)
    p.add_argument("--step", type=float, default=None, help="grid step (default 0.01 for sim1, 0.05 for sim2)")

    p = sub.add_parser("bo", help="one sequential-design run with its trace")
    _common(p)
    p.add_argument("--gp-type", choices=GP_TYPES, default="hm")
    p.add_argument("--budget", type=int, default=25)
    p.add_argument("--kernel", choices=FAMILIES, default="matern52")
    p.add_argument("--ei-tol", type=float, default=None, help="EI plateau threshold (default: off)")
    p.add_argument("--ei-patience", type=int, default=3)

    p = sub.add_parser("case-study", help="two-arm trial analysis from a CSV file")
    _common(p, scenario=False)
    p.add_argument("--csv", required=False, help="trial data file")
    p.add_argument("--id-col", default="pidnum")
    p.add_argument("--arm-col", default="arms")
    p.add_argument("--weight-col", default="wtkg")
    p.add_argument("--cd4-col", default="cd40")
    p.add_argument("--outcome-col", default="cd420")
    p.add_argument("--treated-arm", default="1")
    p.add_argument("--control-arm", default="2")
    p.add_argument("--gp-type", choices=GP_TYPES, default="hm")
    p.add_argument("--kernel", choices=FAMILIES, default="matern52")
    p.add_argument("--B", type=int, default=500, dest="B", help="Bayesian bootstrap draws")
    p.add_argument("--N", type=int, default=250, dest="N", help="posterior paths per draw")
    p.add_argument("--checkpoints", type=_int_list, default=(1, 5, 15, 25))
    p.add_argument("--path-steps", type=_float_list, default=(4.0, 7.5))
    p.add_argument("--per-draw", action="store_true", help="summarize per-draw medians instead of pooling paths")
    p.add_argument("--baselines", action="store_true", help="also run bootstrap grid and MSM baselines")
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("oracle", help="true value of a regime in a simulation scenario")
    p.add_argument("--config", help="TOML file or earlier run_record.json supplying option values")
    p.add_argument("--scenario", choices=SCENARIOS, default="sim1")
    p.add_argument("--psi", type=_float_list, required=False, help="comma-separated regime index")
    p.add_argument("--draws", type=int, default=10**6, help="Monte Carlo draws (sim2)")
    p.add_argument("--seed", type=int, default=12345)
    p.add_argument("--out", default=None)
    return parser


# ---------------------------------------------------------------- config


def _load_config(path) -> dict:
    path = Path(path)
    if path.suffix == ".json":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        data = data.get("config", data)
    else:
        with open(path, "rb") as fh:
            data = _toml.load(fh)
    return {str(k).replace("-", "_"): v for k, v in data.items()}


_LIST_KEYS = {"methods": _methods, "checkpoints": _int_list, "path_steps": _float_list, "psi": _float_list}


def _coerce(key, value):
    if key in _LIST_KEYS and isinstance(value, (list, tuple)):
        value = ",".join(str(v) for v in value)
    if key in _LIST_KEYS and isinstance(value, str):
        return _LIST_KEYS[key](value)
    return value


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            cfg = _load_config(args.config)
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(cfg) - known - {"command", "config"})
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        sub.set_defaults(**{k: _coerce(k, v) for k, v in cfg.items() if k in known and k != "config"})
        args = parser.parse_args(argv)
    return args


def _output_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _write_record(out: Path, args, outputs, results) -> Path:
    config = {k: v for k, v in vars(args).items() if k not in ("out", "config")}
    record = {
        "command": args.command,
        "version": __version__,
        "seed": args.seed,
        "config": config,
        "outputs": [str(p) for p in outputs],
        "results": results,
    }
    path = out / "run_record.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(record), fh, indent=2)
    return path


# ---------------------------------------------------------------- commands


def _propensity(args, cohort):
    return known_propensity(args.scenario) if args.known_propensity else fit_propensity(cohort)


def cmd_simulate(args):
    cfg = ExperimentConfig(
        scenario=args.scenario, n=args.n, replicates=args.replicates, methods=args.methods,
        budget=args.budget, checkpoints=args.checkpoints, noise_variant=args.noise, family=args.kernel,
        known_propensity=args.known_propensity, seed=args.seed, n_starts=args.n_starts,
        true_value_draws=args.true_value_draws,
    )
    t0 = time.time()
    results = run_replicates(cfg, workers=args.workers)
    stats = summarize(results)
    out = _output_dir(args)
    files = [out / "replicates.csv", out / "summary.csv", out / "summary.json"]
    write_replicates_csv(files[0], results)
    write_summary_csv(files[1], stats)
    write_summary_json(files[2], stats)
    _write_record(out, args, files, {"replicates": results_to_json(results),
                                     "summary": [asdict(s) for s in stats]})
    for s in stats:
        cp = "final" if s.checkpoint is None else f"+{s.checkpoint}"
        print(f"{s.method:5s} {cp:>6s} {s.parameter:10s} median {s.median:.4f}  IQR {s.iqr:.4f}  (n={s.n})")
    print(f"wrote {files[1]} in {time.time() - t0:.1f}s")


def cmd_grid(args):
    cohort = generate_cohort(ScenarioSpec(args.scenario, args.n, args.noise, args.seed))
    prop = _propensity(args, cohort)
    family = family_for(args.scenario)
    if args.step is None:
        grid = search_grid(args.scenario)
    else:
        from .harness import _axis, product_grid

        b = scenario_bounds(args.scenario)
        grid = product_grid([_axis(lo, hi, args.step) for lo, hi in b])
    surface = estimation_surface(cohort, family, grid, prop)
    res = grid_search(surface, grid)
    out = _output_dir(args)
    path = out / "surface.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"psi_{d + 1}" for d in range(grid.shape[1])] + ["value"])
        for p, v in zip(grid, surface):
            w.writerow([repr(float(a)) for a in p] + ["" if np.isnan(v) else repr(float(v))])
    result = {"psi": res.psi, "value": res.value, "n_evaluations": res.n_evaluations, "n_missing": res.n_missing}
    _write_record(out, args, [path], result)
    print(f"grid optimum psi={np.round(res.psi, 4).tolist()} value={res.value:.4f} "
          f"({res.n_evaluations} evaluations, {res.n_missing} missing)")


def cmd_bo(args):
    cohort = generate_cohort(ScenarioSpec(args.scenario, args.n, args.noise, args.seed))
    prop = _propensity(args, cohort)
    est = ValueEstimator(cohort, family_for(args.scenario), prop)
    config = BoConfig(gp_type=args.gp_type, family=args.kernel, budget=args.budget,
                      ei_tol=args.ei_tol, ei_patience=args.ei_patience)
    trace = run_bo(est, initial_design(args.scenario), config, rng=args.seed,
                   bounds=scenario_bounds(args.scenario), eval_grid=evaluation_grid(args.scenario))
    out = _output_dir(args)
    path = out / "trace.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "tag", "psi", "value", "max_ei", "incumbent_psi", "incumbent_value"])
        for e in trace.entries:
            w.writerow([e.iteration, e.tag, ";".join(map(repr, e.psi)), repr(e.value), repr(e.max_ei),
                        ";".join(map(repr, e.incumbent_psi)), repr(e.incumbent_value)])
    psi, val = trace.incumbent
    result = {"incumbent_psi": psi, "incumbent_value": val, "failed": trace.failed,
              "n_evaluations": trace.n_evaluations, "stopped_early": trace.stopped_early,
              "trace": [asdict(e) for e in trace.entries]}
    _write_record(out, args, [path], result)
    print(f"{args.gp_type} optimum psi={np.round(psi, 4).tolist()} value={val:.4f} "
          f"after {len(trace.entries)} points ({trace.n_evaluations} evaluations)")


def cmd_case_study(args):
    from .case_study import (
        CsvSchema,
        UncertaintyConfig,
        bootstrap_baselines,
        format_table,
        load_cohort_csv,
        optimizer_uncertainty,
        threshold_family,
        write_table_csv,
    )

    if not args.csv:
        raise DtrGpError("case-study needs --csv (or a csv key in --config)")
    schema = CsvSchema(args.id_col, args.arm_col, args.weight_col, args.cd4_col, args.outcome_col,
                       args.treated_arm, args.control_arm)
    cohort = load_cohort_csv(args.csv, schema)
    family = threshold_family()
    cfg = UncertaintyConfig(B=args.B, N=args.N, path_steps=args.path_steps, checkpoints=args.checkpoints,
                            gp_type=args.gp_type, family=args.kernel, pooled=not args.per_draw)
    out = _output_dir(args)
    print(f"loaded {cohort.n} patients ({int(cohort.z.sum())} treated)")
    summary, draws = optimizer_uncertainty(cohort, family, cfg, seed=args.seed, workers=args.workers)
    table = format_table(summary)
    files = [out / "uncertainty.csv"]
    write_table_csv(files[0], table)
    results = {
        "n": cohort.n,
        "summary": {c: {k: asdict(v) for k, v in s.items()} for c, s in summary.items()},
        "draws": [{"draw": d.draw, "seed": d.seed, "error": d.error,
                   "argmax": d.argmax, "maxima": d.maxima} for d in draws],
    }
    for row in table:
        print("  ".join(row))
    if args.baselines:
        base, bdraws = bootstrap_baselines(cohort, family, B=args.B, seed=args.seed, workers=args.workers)
        btable = format_table(base)
        files.append(out / "baselines.csv")
        write_table_csv(files[-1], btable)
        results["baselines"] = {k: {p: asdict(v) for p, v in s.items()} for k, s in base.items()}
        results["baseline_draws"] = [{"draw": b, "seed": s, "optima": o, "error": e} for b, s, o, e in bdraws]
        for row in btable:
            print("  ".join(row))
    _write_record(out, args, files, results)


def cmd_oracle(args):
    if not args.psi:
        raise DtrGpError("oracle needs --psi")
    value, se = true_value(args.scenario, args.psi, n_draws=args.draws, seed=args.seed)
    out = _output_dir(args)
    _write_record(out, args, [], {"psi": args.psi, "value": value, "standard_error": se})
    print(f"{args.scenario} true value at psi={list(args.psi)}: {value:.5f} (MC s.e. {se:.5f})")


COMMANDS = {"simulate": cmd_simulate, "grid": cmd_grid, "bo": cmd_bo, "case-study": cmd_case_study,
            "oracle": cmd_oracle}


def run(argv=None) -> int:
    """Execute the CLI; returns the process exit code."""
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except (DtrGpError, ValueError, OSError) as exc:
        print(f"dtrgp {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():  # pragma: no cover
    sys.exit(run())


__all__ = ["build_parser", "main", "parse_args", "run"]
