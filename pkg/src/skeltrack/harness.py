"""Experiment orchestration: config loading, benchmarks, Monte-Carlo runs and result files."""

from __future__ import annotations

import csv
import json
import math
import platform
from dataclasses import asdict, dataclass, field
from importlib import metadata, resources
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .optimize import optimize_threshold, summarize, write_trace
from .scenario import build_scenario, default_scenario_config
from .simulation import CONTROLLERS, SimSettings, Simulator, antenna_preset

GBPS = 1e9


@dataclass
class ExperimentConfig:
    seed: int
    scenario: str = "default"
    antennas: str = "narrow"
    r: list = field(default_factory=lambda: [0.0])
    T_D: float | None = None
    tune: bool = False
    retune: bool = False
    U_max: float = 20
    delta: float = 0.05
    R_th: float = 200e6
    trials: int = 200
    controller: str = "skeleton-tracking"
    fixed_distance: float = 7.0
    gamma: list = field(default_factory=list)
    bracket: list | None = None
    tol: float | None = None
    relative_distance: bool = False
    distance_norm: str = "fro"
    skeleton_size: int = 3
    max_paths: int = 6
    phase_convention: str = "printed"
    quantize_to_codebook: bool = False
    pilot_model: str = "strength"
    workers: int = 1
    name: str = "experiment"

    def validate(self) -> "ExperimentConfig":
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed", f"need a non-negative integer seed, got {self.seed!r}")
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError("trials", f"need at least one trial, got {self.trials!r}")
        if self.antennas not in ("narrow", "wide"):
            raise ConfigError("antennas", f"expected narrow or wide, got {self.antennas!r}")
        if self.controller not in CONTROLLERS:
            raise ConfigError("controller", f"expected one of {CONTROLLERS}, got {self.controller!r}")
        if not self.r:
            raise ConfigError("r", "need at least one error radius")
        if any(not isinstance(v, (int, float)) or v < 0 for v in self.r):
            raise ConfigError("r", "radii must be non-negative numbers")
        if not (isinstance(self.R_th, (int, float)) and self.R_th > 0):
            raise ConfigError("R_th", f"must be positive, got {self.R_th!r}")
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigError("delta", f"must lie in [0, 1], got {self.delta}")
        if self.U_max < 1:
            raise ConfigError("U_max", f"must be >= 1, got {self.U_max}")
        if self.controller == "skeleton-tracking" and self.T_D is None and not self.tune:
            raise ConfigError("T_D", "skeleton tracking needs T_D or tune: true")
        if self.T_D is not None and not self.T_D >= 0:
            raise ConfigError("T_D", f"must be >= 0, got {self.T_D}")
        if self.controller == "fixed-distance" and not self.fixed_distance > 0:
            raise ConfigError("fixed_distance", f"must be > 0, got {self.fixed_distance}")
        if self.bracket is not None and (len(self.bracket) != 2 or not self.bracket[1] > self.bracket[0]):
            raise ConfigError("bracket", "need [lo, hi] with lo < hi")
        if self.tol is not None and not self.tol > 0:
            raise ConfigError("tol", "must be positive")
        if self.gamma and any(b < a for a, b in zip(self.gamma, self.gamma[1:])):
            raise ConfigError("gamma", "candidate radii must be sorted ascending")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        # surfaces settings errors now rather than mid-run
        self.settings()
        return self

    def settings(self) -> SimSettings:
        return SimSettings(skeleton_size=self.skeleton_size, max_paths=self.max_paths,
                           relative_distance=self.relative_distance, distance_norm=self.distance_norm,
                           quantize_to_codebook=self.quantize_to_codebook, pilot_model=self.pilot_model)


def config_from_dict(data: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config", "expected a mapping")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(unknown[0], "unknown config field")
    if "seed" not in data:
        raise ConfigError("seed", "a seed is required")
    data = dict(data)
    if isinstance(data.get("r"), (int, float)):
        data["r"] = [data["r"]]
    scen = data.get("scenario", "default")
    if base_dir is not None and scen != "default" and not Path(scen).is_absolute():
        data["scenario"] = str((base_dir / scen).resolve())
    for key in ("R_th", "T_D", "U_max", "delta", "fixed_distance", "tol"):
        if isinstance(data.get(key), str):
            try:
                data[key] = float(data[key])
            except ValueError:
                raise ConfigError(key, f"not a number: {data[key]!r}") from None
    return ExperimentConfig(**data).validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError("config", f"no such file: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML: {exc}") from None
    return config_from_dict(data, path.parent)


def packaged_config(name: str) -> ExperimentConfig:
    """One of the shipped experiment presets (``narrow`` or ``wide``)."""
    text = resources.files("skeltrack.data").joinpath(f"experiment_{name}.yaml").read_text()
    return config_from_dict(yaml.safe_load(text))


def scenario_config(cfg: ExperimentConfig) -> dict:
    if cfg.scenario == "default":
        return default_scenario_config()
    try:
        return yaml.safe_load(Path(cfg.scenario).read_text())
    except FileNotFoundError:
        raise ConfigError("scenario", f"no such file: {cfg.scenario}") from None


def make_simulator(cfg: ExperimentConfig, scenario_cfg: dict | None = None) -> Simulator:
    sc = build_scenario(scenario_cfg if scenario_cfg is not None else scenario_config(cfg))
    return Simulator(sc, antenna_preset(cfg.antennas, cfg.phase_convention), cfg.settings(),
                     world_cache=max(256, cfg.trials))


def _trials(sim: Simulator, cfg: ExperimentConfig, controller: str, r: float, threshold=None, distance=None):
    return sim.run_trials(controller, r, cfg.seed, cfg.trials, threshold=threshold, distance=distance,
                          workers=cfg.workers)


def benchmark_per_grid(cfg: ExperimentConfig, sim: Simulator | None = None, r: float | None = None) -> list:
    """Skeleton refreshed at every grid (U = M)."""
    sim = sim or make_simulator(cfg)
    return _trials(sim, cfg, "per-grid", cfg.r[0] if r is None else r)


def benchmark_fixed_distance(cfg: ExperimentConfig, D: float | None = None, sim: Simulator | None = None,
                             r: float | None = None) -> list:
    """Beams refreshed every ``D`` meters traveled."""
    D = cfg.fixed_distance if D is None else D
    if not D > 0:
        raise ConfigError("fixed_distance", f"must be > 0, got {D}")
    sim = sim or make_simulator(cfg)
    return _trials(sim, cfg, "fixed-distance", cfg.r[0] if r is None else r, distance=D)


def _code_version() -> str:
    try:
        return metadata.version("skeltrack")
    except metadata.PackageNotFoundError:
        return "unknown"


def empirical_cdf(values: np.ndarray):
    v = np.sort(np.asarray(values, dtype=float))
    return v, np.arange(1, len(v) + 1) / len(v)


@dataclass
class RunBundle:
    outdir: Path
    thresholds: dict  # r -> T_D used (None for benchmarks)
    results: dict  # r -> list of TrajectoryResult
    flagged: list  # (r, grid_index, mean_rate) with mean rate below R_th
    manifest: dict


def run(cfg: ExperimentConfig, outdir, sim: Simulator | None = None) -> RunBundle:
    """Execute ``cfg`` and write the result files into ``outdir``."""
    cfg.validate()
    scen_cfg = scenario_config(cfg)
    sim = sim or make_simulator(cfg, scen_cfg)
    outdir = Path(outdir)

    thresholds, trace = {}, []
    for r in cfg.r:
        if cfg.controller != "skeleton-tracking":
            thresholds[r] = None
        elif cfg.T_D is not None:
            thresholds[r] = float(cfg.T_D)
        elif cfg.retune or not thresholds:
            res = optimize_threshold(sim, cfg.U_max, cfg.delta, cfg.bracket, cfg.tol, cfg.trials, cfg.seed,
                                     r if cfg.retune else 0.0, workers=cfg.workers)
            thresholds[r] = res.T_D
            trace += [dict(rec, tuned_for_r=r if cfg.retune else 0.0) for rec in res.trace]
        else:
            thresholds[r] = next(iter(thresholds.values()))

    results = {}
    for r in cfg.r:
        results[r] = _trials(sim, cfg, cfg.controller, r, thresholds[r],
                             cfg.fixed_distance if cfg.controller == "fixed-distance" else None)

    outdir.mkdir(parents=True, exist_ok=True)
    flagged = []
    with open(outdir / "rates_per_grid.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["grid_index", "r", "mean_rate", "stderr"])
        for r in cfg.r:
            est = summarize(results[r], cfg.U_max, thresholds[r], r)
            for g, (m, s) in enumerate(zip(est.per_grid_mean_rates, est.per_grid_stderr)):
                w.writerow([g, r, repr(float(m) / GBPS), repr(float(s) / GBPS)])
                if m < cfg.R_th:
                    flagged.append((r, g, float(m)))
    with open(outdir / "rate_floor_flags.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "grid_index", "mean_rate", "R_th"])
        for r, g, m in flagged:
            w.writerow([r, g, repr(float(m) / GBPS), repr(float(cfg.R_th) / GBPS)])
    with open(outdir / "rate_distribution.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "rate", "cdf"])
        for r in cfg.r:
            x, p = empirical_cdf(np.concatenate([res.per_grid_rate for res in results[r]]))
            for xv, pv in zip(x, p):
                w.writerow([r, repr(float(xv) / GBPS), repr(float(pv))])
    with open(outdir / "updates_table.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "T_D", "mean_U", "stderr_U", "min_U", "max_U", "violation_prob", "mean_pilot_slots",
                    "mean_trajectory_rate"])
        for r in cfg.r:
            U = np.array([res.U for res in results[r]], dtype=float)
            est = summarize(results[r], cfg.U_max, thresholds[r], r)
            se = float(np.std(U, ddof=1) / math.sqrt(len(U))) if len(U) > 1 else 0.0
            w.writerow([r, "" if thresholds[r] is None else repr(float(thresholds[r])), repr(float(U.mean())), repr(se),
                        int(U.min()), int(U.max()), repr(float(est.budget_violation_prob)),
                        repr(float(np.mean([res.pilot_slots for res in results[r]]))),
                        repr(float(est.mean_trajectory_rate) / GBPS)])
    if trace:
        write_trace(trace, outdir / "optimizer_trace.jsonl")

    manifest = {
        "config": asdict(cfg),
        "scenario_config": scen_cfg,
        "thresholds": {str(r): t for r, t in thresholds.items()},
        "seeds": {"master": cfg.seed, "trials": list(range(cfg.trials)),
                  "derivation": "numpy SeedSequence([seed, trial]).spawn(3) -> obstacles, fading, localization"},
        "grid_count": sim.grid_count,
        "units": {"rate": "Gbps"},
        "code_version": _code_version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "files": sorted(p.name for p in outdir.iterdir() if p.name != "manifest.json"),
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default))
    return RunBundle(outdir, thresholds, results, flagged, manifest)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def reproduce_row(manifest: dict, r: float, grid_index: int):
    """Recompute one ``rates_per_grid.csv`` row from a manifest; returns ``(mean_rate, stderr)`` in Gbps."""
    cfg = config_from_dict(dict(manifest["config"]))
    sim = make_simulator(cfg, manifest["scenario_config"])
    thr = manifest["thresholds"][str(r)]
    res = _trials(sim, cfg, cfg.controller, r, thr,
                  cfg.fixed_distance if cfg.controller == "fixed-distance" else None)
    est = summarize(res, cfg.U_max, thr, r)
    return float(est.per_grid_mean_rates[grid_index]) / GBPS, float(est.per_grid_stderr[grid_index]) / GBPS
