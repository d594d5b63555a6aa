"""Command-line entry point: ``skeltrack run|tune-td|tune-r|bench|trace-scenario``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import yaml

from . import harness
from .errors import ConfigError, InfeasibleError
from .optimize import max_tolerable_radius, optimize_threshold, summarize
from .scenario import (ObstacleSet, build_scenario, default_scenario_config, sample_obstacles, scenario_summary,
                       trace_paths)
from .skeleton import populate_database

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 2, 3

_LISTS = {"r", "gamma", "bracket"}


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_config_flags(p: argparse.ArgumentParser, seed_required: bool = False) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="experiment YAML file")
    src.add_argument("--preset", choices=("narrow", "wide"), help="shipped experiment preset")
    for f in fields(harness.ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "seed":
            p.add_argument(flag, type=int, required=seed_required, default=None)
        elif f.name in _LISTS:
            p.add_argument(flag, type=_floats, default=None, metavar="X,Y,...")
        elif f.type in ("bool", bool):
            p.add_argument(flag, type=_bool, default=None, metavar="BOOL")
        elif f.type in ("int", int):
            p.add_argument(flag, type=int, default=None)
        elif f.type in ("str", str):
            p.add_argument(flag, default=None)
        else:
            p.add_argument(flag, type=float, default=None)


def build_config(args, tuning: bool = False) -> harness.ExperimentConfig:
    """Preset or file first, then every explicitly given flag on top.

    ``tuning`` marks subcommands that search for the threshold themselves.
    """
    if args.config is not None:
        base = harness.load_config(args.config)
    elif args.preset is not None:
        base = harness.packaged_config(args.preset)
    else:
        base = None
    data = {} if base is None else {f.name: getattr(base, f.name) for f in fields(base)}
    for f in fields(harness.ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            data[f.name] = v
    if data.get("T_D") is not None and getattr(args, "T_D", None) is not None:
        data["tune"] = False
    if tuning and data.get("T_D") is None:
        data["tune"] = True
    return harness.config_from_dict(data)


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, default=harness._json_default))


def cmd_run(args) -> int:
    cfg = build_config(args)
    bundle = harness.run(cfg, args.out)
    _print({"outdir": str(bundle.outdir), "thresholds": {str(k): v for k, v in bundle.thresholds.items()},
            "flagged_grids": len(bundle.flagged), "files": bundle.manifest["files"]})
    return EXIT_OK


def cmd_tune_td(args) -> int:
    cfg = build_config(args, tuning=True)
    sim = harness.make_simulator(cfg)
    res = optimize_threshold(sim, cfg.U_max, cfg.delta, cfg.bracket, cfg.tol, cfg.trials, cfg.seed, cfg.r[0],
                             workers=cfg.workers, trace_path=args.trace)
    est = res.estimate
    _print({"T_D": res.T_D, "r": cfg.r[0], "mean_trajectory_rate_gbps": est.mean_trajectory_rate / harness.GBPS,
            "violation_prob": est.budget_violation_prob, "mean_U": est.mean_U,
            "grid_argmax": res.grid_argmax, "agrees_with_grid": res.agrees_with_grid,
            "golden_iterations": res.search.iterations})
    return EXIT_OK


def cmd_tune_r(args) -> int:
    cfg = build_config(args, tuning=True)
    if not cfg.gamma:
        raise ConfigError("gamma", "tune-r needs candidate radii (--gamma)")
    sim = harness.make_simulator(cfg)
    res = max_tolerable_radius(sim, cfg.gamma, cfg.U_max, cfg.delta, cfg.R_th, cfg.trials, cfg.seed,
                               T_D=None if cfg.tune else cfg.T_D, retune=cfg.retune, bracket=cfg.bracket,
                               tol=cfg.tol, workers=cfg.workers)
    rows = []
    for row in res.candidates:
        est = row["estimate"]
        rows.append({"r": row["r"], "T_D": row["T_D"], "feasible": row["feasible"], "failing": row["failing"],
                     "min_grid_rate_gbps": None if est is None else est.min_grid_rate / harness.GBPS,
                     "violation_prob": None if est is None else est.budget_violation_prob})
    _print({"r_star": res.r_star, "argmax_min_rate": res.argmax_min_rate, "candidates": rows})
    return EXIT_OK


def cmd_bench(args) -> int:
    args.controller = args.kind
    if args.kind == "fixed-distance" and args.distance is not None:
        args.fixed_distance = args.distance
    cfg = build_config(args)
    sim = harness.make_simulator(cfg)
    out = {}
    for r in cfg.r:
        if args.kind == "per-grid":
            res = harness.benchmark_per_grid(cfg, sim, r)
        else:
            res = harness.benchmark_fixed_distance(cfg, args.distance, sim, r)
        est = summarize(res, cfg.U_max, None, r)
        out[str(r)] = {"mean_U": est.mean_U, "mean_trajectory_rate_gbps": est.mean_trajectory_rate / harness.GBPS,
                       "min_grid_rate_gbps": est.min_grid_rate / harness.GBPS,
                       "per_grid_mean_rate_gbps": [float(v) / harness.GBPS for v in est.per_grid_mean_rates]}
    _print({"benchmark": args.kind, "results": out})
    return EXIT_OK


def cmd_trace_scenario(args) -> int:
    if args.scenario is None or args.scenario == "default":
        sc = build_scenario(default_scenario_config())
    else:
        try:
            sc = build_scenario(yaml.safe_load(Path(args.scenario).read_text()))
        except FileNotFoundError:
            raise ConfigError("scenario", f"no such file: {args.scenario}") from None
    out = {"summary": scenario_summary(sc)}
    if args.paths:
        obstacles = sample_obstacles(sc, args.seed) if args.seed is not None else ObstacleSet(())
        per_grid = []
        for gid, c in enumerate(sc.grid_centers):
            paths = trace_paths(sc, obstacles, c, args.max_paths)
            per_grid.append({"grid": gid, "paths": [
                {"aod_rad": list(p.aod), "aoa_rad": list(p.aoa), "length_m": p.length, "los": p.is_los,
                 "reflections": p.reflection_count, "penetration_loss_db": p.penetration_loss_db}
                for p in paths]})
        out["paths"] = per_grid
    if args.db is not None:
        db = populate_database(sc, args.skeleton_size)
        Path(args.db).write_text(db.to_json())
        out["database"] = str(args.db)
    _print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skeltrack", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="Monte-Carlo run writing CSV/JSON results")
    _add_config_flags(p, seed_required=True)
    p.add_argument("--out", type=Path, default=Path("results"))
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("tune-td", help="golden-section search for the drift threshold")
    _add_config_flags(p)
    p.add_argument("--trace", type=Path, default=None, help="write the optimizer trace (JSONL) here")
    p.set_defaults(func=cmd_tune_td)

    p = sub.add_parser("tune-r", help="largest tolerable localization error radius")
    _add_config_flags(p)
    p.set_defaults(func=cmd_tune_r)

    p = sub.add_parser("bench", help="per-grid or fixed-distance benchmark")
    _add_config_flags(p)
    p.add_argument("--kind", choices=("per-grid", "fixed-distance"), default="per-grid")
    p.add_argument("--distance", type=float, default=None, help="refresh distance D in meters")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("trace-scenario", help="scenario summary, per-grid paths, skeleton database export")
    p.add_argument("--scenario", default=None, help="scenario YAML (default: shipped map)")
    p.add_argument("--paths", action="store_true", help="list traced paths per grid")
    p.add_argument("--seed", type=int, default=None, help="draw temporary blockers with this seed")
    p.add_argument("--max-paths", type=int, default=6)
    p.add_argument("--skeleton-size", type=int, default=3)
    p.add_argument("--db", type=Path, default=None, help="write the skeleton database JSON here")
    p.set_defaults(func=cmd_trace_scenario)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        if exc.report:
            print(json.dumps(exc.report, indent=2, default=str), file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
