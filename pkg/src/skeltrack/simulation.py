"""Monte-Carlo trial engine: one trajectory walk per trial under a chosen controller.

Each trial draws its obstacles, per-grid small-scale fading and per-grid
localization errors from three independent streams derived from
``(seed, trial)``. Nothing in the draws depends on the controller, the
threshold or the error radius, so sweeps over those run on common random
numbers.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import beamforming as bf
from .channel import ArrayGeometry, PathGain, large_scale_gain, unit_fading
from .errors import ConfigError
from .localization import snap_to_grid, unit_disk_samples
from .scenario import Scenario, blocker_losses, candidate_paths, path_power_dbm, sample_obstacles
from .skeleton import (
    PILOT_MODELS,
    LinkSettings,
    estimate_on_skeleton,
    grid_context,
    populate_database,
    start_tracking,
    tracking_step,
)

CONTROLLERS = ("skeleton-tracking", "per-grid", "fixed-distance")


@dataclass(frozen=True)
class AntennaConfig:
    name: str
    tx: ArrayGeometry
    rx: ArrayGeometry


def antenna_preset(name: str, phase_convention: str = "printed") -> AntennaConfig:
    """``narrow``: 8x8 BS, 4x4 UE. ``wide`` halves the horizontal aperture: 4x8 BS, 2x4 UE."""
    shapes = {"narrow": ((8, 8), (4, 4)), "wide": ((4, 8), (2, 4))}
    if name not in shapes:
        raise ConfigError("antennas", f"unknown antenna scenario {name!r}; expected narrow or wide")
    (tc, tr), (rc, rr) = shapes[name]
    return AntennaConfig(name, ArrayGeometry(tc, tr, phase_convention), ArrayGeometry(rc, rr, phase_convention))


@dataclass(frozen=True)
class SimSettings:
    skeleton_size: int = 3
    max_paths: int = 6
    angular_resolution_deg: float = 0.1
    resample_obstacles: bool = False
    relative_distance: bool = False
    distance_norm: str = "fro"
    quantize_to_codebook: bool = False
    pilot_model: str = "strength"

    def __post_init__(self):
        if self.skeleton_size < 1:
            raise ConfigError("skeleton_size", "must be >= 1")
        if self.max_paths < 1:
            raise ConfigError("max_paths", "must be >= 1")
        if self.distance_norm not in ("fro", "spectral"):
            raise ConfigError("distance_norm", f"expected fro or spectral, got {self.distance_norm!r}")
        if self.pilot_model not in PILOT_MODELS:
            raise ConfigError("pilot_model", f"expected one of {PILOT_MODELS}, got {self.pilot_model!r}")


@dataclass(eq=False)
class TrialWorld:
    seed: int
    trial: int
    contexts: list
    unit_errors: np.ndarray  # (M, 2) points in the unit disk
    obstacle_counts: list

    def draw_signature(self) -> tuple:
        """Compact fingerprint of every random draw, for common-random-number checks."""
        h = [complex(g.h) for c in self.contexts for g in c.gains]
        return (tuple(self.obstacle_counts), tuple(np.round(self.unit_errors.ravel(), 15)), tuple(h))


@dataclass(eq=False)
class TrajectoryResult:
    per_grid_rate: np.ndarray  # bit/s
    per_grid_snr_db: np.ndarray
    update_events: list  # grid indices of re-queries after the initial one
    U: int
    pilot_slots: int
    seed: int
    trial: int
    controller: str = "skeleton-tracking"
    perceived_grids: list = field(default_factory=list)
    out_of_trajectory: int = 0
    distances: np.ndarray | None = None

    @property
    def trajectory_rate(self) -> float:
        return bf.trajectory_rate(self.per_grid_rate)


def _snr_db(s: float) -> float:
    return 10.0 * math.log10(s) if s > 0 else -math.inf


class Simulator:
    """Precomputes the blocker-free geometry and the skeleton database for a scenario/antenna pair."""

    def __init__(self, scenario: Scenario, antennas: AntennaConfig, settings: SimSettings = SimSettings(),
                 world_cache: int = 256):
        self.scenario = scenario
        self.antennas = antennas
        self.settings = settings
        res = settings.angular_resolution_deg
        self.db = populate_database(scenario, settings.skeleton_size, res)
        self._candidates = [candidate_paths(scenario, c, math.radians(res)) for c in scenario.grid_centers]
        codebooks = {}
        if settings.quantize_to_codebook:
            codebooks = {"tx_codebook": bf.build_codebook(antennas.tx, side="tx"),
                         "rx_codebook": bf.build_codebook(antennas.rx, side="rx")}
        self.link = LinkSettings.from_radio(scenario.radio, antennas.tx, antennas.rx,
                                            norm=settings.distance_norm, relative=settings.relative_distance,
                                            pilot_model=settings.pilot_model,
                                            **codebooks)
        self._cache_size = world_cache
        self._worlds = OrderedDict()

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_worlds"] = OrderedDict()
        return state

    @property
    def grid_count(self) -> int:
        return self.scenario.grid_count

    # -- random worlds ------------------------------------------------------

    def world(self, seed: int, trial: int) -> TrialWorld:
        key = (int(seed), int(trial))
        if key in self._worlds:
            self._worlds.move_to_end(key)
            return self._worlds[key]
        w = self._build_world(*key)
        self._worlds[key] = w
        if len(self._worlds) > self._cache_size:
            self._worlds.popitem(last=False)
        return w

    def _build_world(self, seed: int, trial: int) -> TrialWorld:
        sc = self.scenario
        radio = sc.radio
        obs_seq, fad_seq, loc_seq = np.random.SeedSequence([seed, trial]).spawn(3)
        M = sc.grid_count
        if self.settings.resample_obstacles:
            obstacle_sets = [sample_obstacles(sc, np.random.default_rng(s)) for s in obs_seq.spawn(M)]
        else:
            obstacle_sets = [sample_obstacles(sc, np.random.default_rng(obs_seq))] * M
        fad_rng = np.random.default_rng(fad_seq)
        contexts = []
        for g in range(M):
            cands = self._candidates[g]
            z = unit_fading(fad_rng, len(cands))
            extra = blocker_losses(cands, obstacle_sets[g])
            paths = [replace(c.path, penetration_loss_db=c.path.penetration_loss_db + float(e))
                     for c, e in zip(cands, extra)]
            powers = [path_power_dbm(p, radio) for p in paths]
            keep = sorted((i for i, pw in enumerate(powers) if pw >= radio.power_floor_dbm),
                          key=lambda i: -powers[i])[: self.settings.max_paths]
            sel = [paths[i] for i in keep]
            gains = []
            for i in keep:
                beta = large_scale_gain(paths[i], radio.frequency_hz, radio.los_exponent, radio.nlos_exponent)
                gains.append(PathGain(beta, complex(math.sqrt(beta) * z[i])))
            contexts.append(grid_context(g, sel, gains, self.antennas.tx, self.antennas.rx))
        errors = unit_disk_samples(np.random.default_rng(loc_seq), M)
        counts = [len(o) for o in (obstacle_sets if self.settings.resample_obstacles else obstacle_sets[:1])]
        return TrialWorld(seed, trial, contexts, errors, counts)

    def perceived(self, world: TrialWorld, r: float):
        out = []
        for g in range(self.grid_count):
            xy = self.scenario.grid_centers[g, :2] + r * world.unit_errors[g]
            out.append(snap_to_grid(self.scenario, xy))
        return out

    # -- controllers --------------------------------------------------------

    def run_tracking(self, world: TrialWorld, r: float, threshold: float, force_update: bool = False,
                     controller: str = "skeleton-tracking") -> TrajectoryResult:
        db = self.db.fresh()
        perceived = self.perceived(world, r)
        M = self.grid_count
        rates = np.zeros(M)
        snrs = np.zeros(M)
        dists = np.zeros(M)
        events, slots = [], 0
        state = None
        for g, ctx in enumerate(world.contexts):
            pg = perceived[g][0]
            if state is None:
                step = start_tracking(ctx, db, pg, threshold, self.link)
            else:
                step = tracking_step(state, ctx, db, pg, self.link, force_update=force_update)
                if step.update_event:
                    events.append(g)
            state = step.state
            rates[g], snrs[g], dists[g] = step.rate, _snr_db(step.snr), step.distance
            slots += step.pilot_slots
        return TrajectoryResult(rates, snrs, events, db.query_count, slots, world.seed, world.trial, controller,
                                [p[0] for p in perceived], sum(p[1] for p in perceived), dists)

    def run_per_grid(self, world: TrialWorld, r: float) -> TrajectoryResult:
        return self.run_tracking(world, r, 0.0, force_update=True, controller="per-grid")

    def run_fixed_distance(self, world: TrialWorld, r: float, distance: float) -> TrajectoryResult:
        """Re-query and re-steer every ``distance`` meters traveled; beams are frozen in between."""
        if not distance > 0:
            raise ConfigError("fixed_distance", f"update distance must be > 0, got {distance}")
        sc = self.scenario
        length = sc.trajectory_length
        updates_per_grid = np.zeros(self.grid_count, dtype=int)
        if math.isinf(distance):
            updates_per_grid[0] = 1
        else:
            for k in range(int(math.floor(length / distance)) + 1):
                s = k * distance
                if s < length - 1e-9:
                    updates_per_grid[sc.grid_of_arclength(s)] += 1
        db = self.db.fresh()
        perceived = self.perceived(world, r)
        link = self.link
        rates = np.zeros(self.grid_count)
        snrs = np.zeros(self.grid_count)
        events, slots, beams = [], 0, None
        for g, ctx in enumerate(world.contexts):
            for _ in range(updates_per_grid[g]):
                ps = db.query(perceived[g][0]).skeleton
                est = estimate_on_skeleton(ctx, ps, link.tx_geom, link.rx_geom, link.tx_power_dbm,
                                           link.pilot_model)
                slots += est.pilot_slots
                beams = bf.select_beams_skeleton(est.measured_power_dbm, ps, link.tx_geom, link.rx_geom,
                                                 link.power_floor_dbm, link.tx_codebook, link.rx_codebook)
            if updates_per_grid[g] and g > 0:
                events.append(g)
            if beams is not None:
                s = bf.snr(ctx.channel, beams[0], beams[1], link.sigma2)
                rates[g], snrs[g] = bf.rate(s, link.bandwidth_hz), _snr_db(s)
            else:
                snrs[g] = -math.inf
        return TrajectoryResult(rates, snrs, events, db.query_count, slots, world.seed, world.trial,
                                "fixed-distance", [p[0] for p in perceived], sum(p[1] for p in perceived))

    def run_controller(self, world: TrialWorld, controller: str, r: float, threshold: float | None = None,
                       distance: float | None = None) -> TrajectoryResult:
        if controller == "skeleton-tracking":
            if threshold is None:
                raise ConfigError("T_D", "skeleton tracking needs a threshold")
            return self.run_tracking(world, r, threshold)
        if controller == "per-grid":
            return self.run_per_grid(world, r)
        if controller == "fixed-distance":
            if distance is None:
                raise ConfigError("fixed_distance", "fixed-distance controller needs a distance")
            return self.run_fixed_distance(world, r, distance)
        raise ConfigError("controller", f"unknown controller {controller!r}; expected one of {CONTROLLERS}")

    def run_trials(self, controller: str, r: float, seed: int, trials: int, threshold: float | None = None,
                   distance: float | None = None, workers: int = 1) -> list:
        """Results for trials ``0..trials-1`` in trial order."""
        if trials < 1:
            raise ConfigError("trials", f"need at least one trial, got {trials}")
        if workers <= 1:
            return [self.run_controller(self.world(seed, t), controller, r, threshold, distance)
                    for t in range(trials)]
        chunks = [list(range(k, trials, workers)) for k in range(workers)]
        args = [(self, controller, r, seed, c, threshold, distance) for c in chunks if c]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, args))
        results = [res for part in parts for res in part]
        return sorted(results, key=lambda res: res.trial)


def _run_chunk(args):
    sim, controller, r, seed, trial_ids, threshold, distance = args
    return [sim.run_controller(sim.world(seed, t), controller, r, threshold, distance) for t in trial_ids]
