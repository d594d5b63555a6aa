"""Outer optimizations: the re-query threshold T_D* and the tolerable error radius r*."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, InfeasibleError

log = logging.getLogger(__name__)

GOLDEN_SHRINK = 0.618
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(eq=False)
class ObjectiveEstimate:
    mean_trajectory_rate: float  # bit/s
    trajectory_rate_stderr: float
    per_grid_mean_rates: np.ndarray
    per_grid_stderr: np.ndarray
    budget_violation_prob: float
    violation_stderr: float
    min_grid_rate: float
    mean_U: float
    trials: int
    threshold: float | None = None
    r: float = 0.0

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials", "an estimate needs at least one trial")

    @property
    def min_grid_index(self) -> int:
        return int(np.argmin(self.per_grid_mean_rates))

    def feasible(self, delta: float, R_th: float | None = None) -> bool:
        ok = self.budget_violation_prob <= delta
        if R_th is not None:
            ok = ok and self.min_grid_rate >= R_th
        return ok

    def record(self) -> dict:
        return {
            "T_D": self.threshold,
            "r": self.r,
            "objective": self.mean_trajectory_rate,
            "stderr": self.trajectory_rate_stderr,
            "violation_prob": self.budget_violation_prob,
            "violation_stderr": self.violation_stderr,
            "min_grid_rate": self.min_grid_rate,
            "mean_U": self.mean_U,
            "trials": self.trials,
        }


def _stderr(x: np.ndarray, axis=0):
    n = x.shape[axis]
    if n < 2:
        return np.zeros(np.delete(x.shape, axis)) if x.ndim > 1 else 0.0
    return np.std(x, axis=axis, ddof=1) / math.sqrt(n)


def summarize(results: Sequence, U_max: float, threshold: float | None = None, r: float = 0.0) -> ObjectiveEstimate:
    """Aggregate trajectory results (already in trial order) into an estimate."""
    if not results:
        raise ConfigError("trials", "an estimate needs at least one trial")
    rates = np.array([res.per_grid_rate for res in results])
    totals = np.array([res.trajectory_rate for res in results])
    U = np.array([res.U for res in results], dtype=float)
    viol = (U > U_max).astype(float)
    per_grid = rates.mean(axis=0)
    return ObjectiveEstimate(
        mean_trajectory_rate=math.fsum(totals) / len(totals),
        trajectory_rate_stderr=float(_stderr(totals)),
        per_grid_mean_rates=per_grid,
        per_grid_stderr=np.asarray(_stderr(rates)),
        budget_violation_prob=float(viol.mean()),
        violation_stderr=float(_stderr(viol)),
        min_grid_rate=float(per_grid.min()),
        mean_U=float(U.mean()),
        trials=len(results),
        threshold=threshold,
        r=r,
    )


def evaluate(sim, T_D: float, r: float, trials: int, seed: int, U_max: float = 20,
             workers: int = 1) -> ObjectiveEstimate:
    """Monte-Carlo estimate of the tracking objective at ``(T_D, r)``.

    Trial ``k`` always uses the world derived from ``(seed, k)``, so two calls
    with the same seed share every random draw.
    """
    if trials < 1:
        raise ConfigError("trials", f"need at least one trial, got {trials}")
    results = sim.run_trials("skeleton-tracking", r, seed, trials, threshold=T_D, workers=workers)
    return summarize(results, U_max, T_D, r)


# -- golden-section search ---------------------------------------------------


def golden_section_iterations(lo: float, hi: float, tol: float) -> int:
    if not hi > lo:
        raise ConfigError("bracket", f"need lo < hi, got [{lo}, {hi}]")
    if not tol > 0:
        raise ConfigError("tol", f"tolerance must be positive, got {tol}")
    if hi - lo <= tol:
        return 0
    return int(math.ceil(math.log(tol / (hi - lo)) / math.log(GOLDEN_SHRINK)))


@dataclass
class SearchResult:
    x: float
    value: object
    iterations: int
    probes: list = field(default_factory=list)  # (x, value) in evaluation order
    bracket: tuple = ()


def golden_section_search(f: Callable, lo: float, hi: float, tol: float) -> SearchResult:
    """Maximize ``f`` on ``[lo, hi]``.

    ``f`` may return any totally ordered value (floats, tuples). The search
    runs a fixed number of shrink steps and then returns the best probe seen,
    which is not necessarily the last one.
    """
    n = golden_section_iterations(lo, hi, tol)
    probes = []

    def probe(x):
        v = f(x)
        probes.append((x, v))
        return v

    a, b = float(lo), float(hi)
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = probe(c), probe(d)
    for _ in range(n):
        if fc >= fd:  # ties keep the left part
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = probe(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = probe(d)
    best_x, best_v = probes[0]
    for x, v in probes[1:]:
        if v > best_v:
            best_x, best_v = x, v
    return SearchResult(best_x, best_v, n, probes, (a, b))


# -- threshold tuning --------------------------------------------------------


def suggest_bracket(sim, seed: int, trials: int = 20, r: float = 0.0, slack: float = 0.5):
    """``[0, hi]`` with ``hi`` about where the tracker stops re-querying.

    Starting from the median grid-to-grid drift under per-grid refresh, ``hi`` is halved or
    doubled until it is the smallest such step with mean U at most ``1 + slack``. Beyond
    that point U is flat and rate differences are mostly noise, which would mislead a
    golden-section search. Drift has a heavy tail, so a high quantile of it overshoots
    this point by an order of magnitude.
    """
    d = np.concatenate([sim.run_per_grid(sim.world(seed, t), r).distances[1:] for t in range(trials)])
    d = d[np.isfinite(d) & (d > 0)]
    if not d.size:
        return 0.0, 1.0
    worlds = [sim.world(seed, t) for t in range(trials)]

    def saturated(T):
        return np.mean([sim.run_tracking(w, r, T).U for w in worlds]) <= 1 + slack

    hi = float(np.median(d))
    if saturated(hi):
        for _ in range(60):
            if not saturated(hi / 2):
                break
            hi /= 2
    else:
        for _ in range(60):
            hi *= 2
            if saturated(hi):
                break
    return 0.0, hi


@dataclass
class ThresholdResult:
    T_D: float
    estimate: ObjectiveEstimate
    search: SearchResult
    grid: list  # ObjectiveEstimate per grid point
    grid_argmax: float | None
    agrees_with_grid: bool
    trace: list


def _feasible_key(est: ObjectiveEstimate, delta: float):
    # Infeasible probes score -inf; among them, lower violation ranks higher so the
    # search still walks toward the feasible side of the bracket.
    if est.budget_violation_prob <= delta:
        return (1, est.mean_trajectory_rate)
    return (0, -est.budget_violation_prob)


def _grid_argmax(points, estimates, delta):
    feas = [(e.mean_trajectory_rate, -i) for i, e in enumerate(estimates) if e.budget_violation_prob <= delta]
    if not feas:
        return None
    _, neg = max(feas)
    return points[-neg]


def optimize_threshold(sim, U_max: float, delta: float = 0.05, bracket=None, tol: float | None = None,
                       trials: int = 200, seed: int = 0, r: float = 0.0, grid_points: int = 11,
                       workers: int = 1, trace_path=None) -> ThresholdResult:
    """Golden-section search for the threshold maximizing the mean trajectory rate under the budget."""
    if not 0.0 <= delta <= 1.0:
        raise ConfigError("delta", f"must lie in [0, 1], got {delta}")
    if U_max < 1:
        raise ConfigError("U_max", f"must be >= 1, got {U_max}")
    if bracket is None:
        bracket = suggest_bracket(sim, seed, min(trials, 20), r)
    lo, hi = (float(v) for v in bracket)
    if not hi > lo:
        raise ConfigError("bracket", f"need lo < hi, got [{lo}, {hi}]")
    if tol is None:
        tol = 1e-3 * (hi - lo)

    cache = {}

    def est_at(T):
        if T not in cache:
            cache[T] = evaluate(sim, T, r, trials, seed, U_max, workers)
        return cache[T]

    search = golden_section_search(lambda T: _feasible_key(est_at(T), delta), lo, hi, tol)
    points = list(np.linspace(lo, hi, grid_points)) if grid_points > 1 else []
    grid = [est_at(float(T)) for T in points]
    g_best = _grid_argmax(points, grid, delta)

    trace = [dict(cache[x].record(), source="golden", feasible=bool(cache[x].budget_violation_prob <= delta))
             for x, _ in search.probes]
    trace += [dict(e.record(), source="grid", feasible=bool(e.budget_violation_prob <= delta)) for e in grid]
    for rec in trace:
        if not rec["feasible"]:
            rec["objective"] = -math.inf
    if trace_path is not None:
        write_trace(trace, trace_path)

    feasible_probes = [(cache[x].mean_trajectory_rate, x) for x, _ in search.probes
                       if cache[x].budget_violation_prob <= delta]
    if not feasible_probes:
        if g_best is None:
            curve = sorted({(T, e.budget_violation_prob) for T, e in cache.items()})
            raise InfeasibleError(
                f"no threshold in [{lo}, {hi}] keeps Pr(U > {U_max}) <= {delta}",
                [{"T_D": T, "violation_prob": p} for T, p in curve],
            )
        # golden section never landed on a feasible point but the grid did
        best = float(g_best)
    else:
        best = search.x
    cell = (hi - lo) / (grid_points - 1) if grid_points > 1 else math.inf
    agrees = g_best is not None and abs(best - g_best) <= cell * (1 + 1e-9)
    if g_best is not None and not agrees:
        log.warning("golden-section T_D*=%.6g differs from 11-point grid argmax %.6g by more than one cell",
                    best, g_best)
    return ThresholdResult(best, est_at(best), search, grid, g_best, agrees, trace)


def write_trace(records: list, path) -> None:
    """One JSON object per line, one line per probe."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({k: _jsonable(v) for k, v in rec.items()}) + "\n")


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, np.generic):
        return v.item()
    return v


# -- tolerable radius --------------------------------------------------------


@dataclass
class RadiusResult:
    r_star: float
    argmax_min_rate: float  # r maximizing min_i E[R_i(r)] over the whole candidate set
    candidates: list  # dict per r: T_D, estimate, feasible, failing


def max_tolerable_radius(sim, gamma: Sequence[float], U_max: float, delta: float = 0.05, R_th: float = 200e6,
                         trials: int = 200, seed: int = 0, T_D: float | None = None, retune: bool = False,
                         bracket=None, tol: float | None = None, workers: int = 1) -> RadiusResult:
    """Largest error radius in ``gamma`` meeting both the rate floor and the query budget.

    Without ``T_D`` the threshold is tuned once at ``r = 0`` and reused, or per
    radius when ``retune`` is set.
    """
    gamma = [float(g) for g in gamma]
    if not gamma:
        raise ConfigError("Gamma", "candidate radius set is empty")
    if any(b < a for a, b in zip(gamma, gamma[1:])):
        raise ConfigError("Gamma", "candidate radii must be sorted ascending")
    if any(g < 0 for g in gamma):
        raise ConfigError("Gamma", "radii must be non-negative")
    if not R_th > 0:
        raise ConfigError("R_th", f"must be positive, got {R_th}")

    def tune(r):
        try:
            return optimize_threshold(sim, U_max, delta, bracket, tol, trials, seed, r, workers=workers).T_D
        except InfeasibleError:
            return None

    shared = T_D if T_D is not None else (None if retune else tune(0.0))
    rows = []
    for r in gamma:
        thr = T_D if T_D is not None else (tune(r) if retune else shared)
        if thr is None:
            rows.append({"r": r, "T_D": None, "estimate": None, "feasible": False,
                         "failing": ["no threshold meets the query budget"]})
            continue
        est = evaluate(sim, thr, r, trials, seed, U_max, workers)
        failing = []
        if est.min_grid_rate < R_th:
            failing.append(f"min grid rate {est.min_grid_rate / 1e6:.1f} Mbps < R_th {R_th / 1e6:.1f} Mbps "
                           f"(grid {est.min_grid_index})")
        if est.budget_violation_prob > delta:
            failing.append(f"Pr(U > {U_max}) = {est.budget_violation_prob:.3f} > delta {delta}")
        rows.append({"r": r, "T_D": thr, "estimate": est, "feasible": not failing, "failing": failing})

    scored = [(row["estimate"].min_grid_rate, row["r"]) for row in rows if row["estimate"] is not None]
    argmax_min = max(scored)[1] if scored else math.nan  # ties go to the larger radius
    feasible = [row["r"] for row in rows if row["feasible"]]
    if not feasible:
        raise InfeasibleError(
            "no candidate radius satisfies the rate floor and the query budget",
            [{"r": row["r"], "T_D": row["T_D"], "failing": row["failing"]} for row in rows],
        )
    return RadiusResult(max(feasible), argmax_min, rows)
