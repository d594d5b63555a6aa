"""Path skeletons, the per-grid skeleton database and skeleton tracking.

A path skeleton is the short list of strongest paths (AoD, AoA, gain) for a
grid. The BS sounds pilots along the reference skeleton's directions, rebuilds
a channel estimate on those directions, and re-queries the database only when
the estimate has drifted from the reference by more than a threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from . import beamforming as bf
from .channel import ArrayGeometry, ChannelMatrix, array_response, assemble_channel, large_scale_gain
from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class SkeletonPath:
    aod: tuple  # (phi, theta), radians
    aoa: tuple
    beta: float


@dataclass(frozen=True)
class PathSkeleton:
    grid_id: int
    paths: tuple = ()

    def __len__(self):
        return len(self.paths)


def extract_skeleton(paths: Sequence, gains: Sequence[float], L: int, grid_id: int) -> PathSkeleton:
    """Keep the ``L`` largest-gain paths, strongest first (stable on ties)."""
    if L < 1:
        raise ConfigError("skeleton_size", f"L must be >= 1, got {L}")
    if len(paths) != len(gains):
        raise DomainError(f"{len(paths)} paths but {len(gains)} gains")
    order = sorted(range(len(paths)), key=lambda i: -float(gains[i]))[:L]
    return PathSkeleton(grid_id, tuple(SkeletonPath(tuple(paths[i].aod), tuple(paths[i].aoa), float(gains[i]))
                                       for i in order))


@dataclass(frozen=True)
class QueryResult:
    skeleton: PathSkeleton
    query_count: int
    budget_exceeded: bool


class SkeletonDatabase:
    """Read-only map ``grid_id -> PathSkeleton`` with a query counter.

    The counter is the only mutable state; ``fresh()`` hands each trial its own
    counter over the shared entries. Queries past the budget still succeed and
    are flagged.
    """

    def __init__(self, entries: Mapping[int, PathSkeleton], budget: int | None = None):
        self._entries = dict(entries)
        self.budget = budget
        self.query_count = 0

    def __len__(self):
        return len(self._entries)

    def __contains__(self, grid_id):
        return grid_id in self._entries

    @property
    def entries(self) -> Mapping[int, PathSkeleton]:
        return self._entries

    def fresh(self, budget: int | None = None) -> "SkeletonDatabase":
        db = SkeletonDatabase.__new__(SkeletonDatabase)
        db._entries = self._entries
        db.budget = self.budget if budget is None else budget
        db.query_count = 0
        return db

    def query(self, grid_id: int) -> QueryResult:
        try:
            ps = self._entries[grid_id]
        except KeyError:
            raise LookupError(f"grid {grid_id} is not covered by this database") from None
        self.query_count += 1
        exceeded = self.budget is not None and self.query_count > self.budget
        return QueryResult(ps, self.query_count, exceeded)

    def to_json(self) -> str:
        """Export keyed by grid id; angles in degrees, gains in dB."""
        out = {}
        for gid, ps in sorted(self._entries.items()):
            out[str(gid)] = [
                {
                    "aod_deg": [math.degrees(a) for a in p.aod],
                    "aoa_deg": [math.degrees(a) for a in p.aoa],
                    "gain_db": 10 * math.log10(p.beta) if p.beta > 0 else None,
                }
                for p in ps.paths
            ]
        return json.dumps({"budget": self.budget, "skeletons": out}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SkeletonDatabase":
        data = json.loads(text)
        entries = {}
        for key, rows in data["skeletons"].items():
            paths = tuple(
                SkeletonPath(
                    tuple(math.radians(a) for a in row["aod_deg"]),
                    tuple(math.radians(a) for a in row["aoa_deg"]),
                    0.0 if row["gain_db"] is None else 10 ** (row["gain_db"] / 10),
                )
                for row in rows
            )
            entries[int(key)] = PathSkeleton(int(key), paths)
        return cls(entries, data.get("budget"))


def db_query(db: SkeletonDatabase, grid_id: int) -> PathSkeleton:
    return db.query(grid_id).skeleton


def populate_database(scenario, L: int, angular_resolution: float = 0.1, budget: int | None = None):
    """Trace every grid center with no temporary blockers and store its skeleton."""
    from .scenario import ObstacleSet, trace_paths

    radio = scenario.radio
    entries = {}
    for gid, center in enumerate(scenario.grid_centers):
        paths = trace_paths(scenario, ObstacleSet(()), center, L, angular_resolution)
        gains = [large_scale_gain(p, radio.frequency_hz, radio.los_exponent, radio.nlos_exponent) for p in paths]
        entries[gid] = extract_skeleton(paths, gains, L, gid)
    return SkeletonDatabase(entries, budget)


# -- estimation -------------------------------------------------------------


@dataclass(eq=False)
class GridContext:
    """What the physical channel looks like at one grid visit of one trial."""

    grid_id: int
    paths: tuple
    gains: tuple  # PathGain per path
    channel: ChannelMatrix


def grid_context(grid_id, paths, gains, tx_geom, rx_geom) -> GridContext:
    H = assemble_channel(paths, gains, tx_geom, rx_geom, grid_id)
    return GridContext(grid_id, tuple(paths), tuple(gains), H)


@dataclass(frozen=True, eq=False)
class SkeletonBasis:
    a_tx: np.ndarray  # (N_tx, L)
    a_rx: np.ndarray  # (N_rx, L)
    gram_pinv: np.ndarray  # (L, L)
    scale: float  # sqrt(N_tx * N_rx / L)


@lru_cache(maxsize=8192)
def skeleton_basis(ps: PathSkeleton, tx_geom: ArrayGeometry, rx_geom: ArrayGeometry) -> SkeletonBasis:
    n = len(ps)
    if n == 0:
        return SkeletonBasis(np.zeros((tx_geom.total, 0), complex), np.zeros((rx_geom.total, 0), complex),
                             np.zeros((0, 0), complex), 0.0)
    aod = np.array([p.aod for p in ps.paths])
    aoa = np.array([p.aoa for p in ps.paths])
    a_tx = array_response(tx_geom, aod[:, 0], aod[:, 1])
    a_rx = array_response(rx_geom, aoa[:, 0], aoa[:, 1])
    # <A_k, A_l>_F for the rank-one atoms A_k = a_rx,k a_tx,k^H
    gram = (a_rx.conj().T @ a_rx) * (a_tx.conj().T @ a_tx).T
    return SkeletonBasis(a_tx, a_rx, np.linalg.pinv(gram, rcond=1e-10, hermitian=True),
                         math.sqrt(tx_geom.total * rx_geom.total / n))


@dataclass(eq=False)
class SkeletonEstimate:
    channel: ChannelMatrix
    coefficients: np.ndarray  # per-path h in the Eq.-(1) normalization
    pilots: np.ndarray  # complex pilot outputs w_k^H H f_k
    measured_power_dbm: np.ndarray
    pilot_slots: int


PILOT_MODELS = ("strength", "complex")


def estimate_on_skeleton(context: GridContext, ps: PathSkeleton, tx_geom: ArrayGeometry,
                         rx_geom: ArrayGeometry, tx_power_dbm: float = 30.0,
                         pilot_model: str = "strength") -> SkeletonEstimate:
    """Sound one pilot per skeleton path and rebuild the channel on the skeleton directions.

    The pilot along path ``k`` returns ``y_k = a_rx,k^H H a_tx,k``.

    ``pilot_model="strength"``: only the received strength ``|y_k|`` is kept and the
    estimate is the channel sum with those amplitudes as path gains.
    ``pilot_model="complex"``: the least-squares fit of ``H`` onto the rank-one atoms
    of the skeleton, which is exact when the skeleton covers the physical paths.
    """
    if pilot_model not in PILOT_MODELS:
        raise DomainError(f"unknown pilot model {pilot_model!r}")
    basis = skeleton_basis(ps, tx_geom, rx_geom)
    H = context.channel.entries
    if len(ps) == 0:
        zero = np.zeros_like(H)
        return SkeletonEstimate(ChannelMatrix(zero, context.grid_id), np.zeros(0, complex),
                                np.zeros(0, complex), np.zeros(0), 0)
    pilots = np.einsum("ik,ij,jk->k", basis.a_rx.conj(), H, basis.a_tx)
    if pilot_model == "strength":
        g = np.abs(pilots).astype(complex)
    else:
        g = basis.gram_pinv @ pilots
    H_hat = (basis.a_rx * g) @ basis.a_tx.conj().T
    with np.errstate(divide="ignore"):
        power = tx_power_dbm + 10.0 * np.log10(np.abs(pilots) ** 2)
    return SkeletonEstimate(ChannelMatrix(H_hat, context.grid_id), g / basis.scale, pilots, power, len(ps))


def skeleton_distance(H_i: ChannelMatrix, H_0: ChannelMatrix, norm: str = "fro", relative: bool = False) -> float:
    """Distance between two channel estimates (Frobenius by default, spectral with ``norm="spectral"``).

    ``relative=True`` divides by the norm of ``H_0``.
    """
    a, b = H_i.entries, H_0.entries
    if a.shape != b.shape:
        raise DomainError(f"shape mismatch {a.shape} vs {b.shape}")
    order = 2 if norm == "spectral" else "fro"
    d = float(np.linalg.norm(a - b, ord=order))
    if relative:
        ref = float(np.linalg.norm(b, ord=order))
        if ref == 0:
            return 0.0 if d == 0 else math.inf
        d /= ref
    return d


# -- tracking ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrackingState:
    reference_ps: PathSkeleton
    reference_channel: ChannelMatrix
    threshold: float
    reference_grid: int = -1


@dataclass(frozen=True)
class LinkSettings:
    """Everything a tracking step needs besides the channel and the database."""

    tx_geom: ArrayGeometry
    rx_geom: ArrayGeometry
    tx_power_dbm: float = 30.0
    noise_psd_dbm_hz: float = -174.0
    bandwidth_hz: float = 100.0e6
    power_floor_dbm: float = -140.0
    norm: str = "fro"
    relative: bool = False
    tx_codebook: object = None
    rx_codebook: object = None
    pilot_model: str = "strength"

    @property
    def sigma2(self) -> float:
        return bf.sigma2_from_budget(self.tx_power_dbm, self.noise_psd_dbm_hz, self.bandwidth_hz)

    @classmethod
    def from_radio(cls, radio, tx_geom, rx_geom, **kw) -> "LinkSettings":
        return cls(tx_geom, rx_geom, radio.tx_power_dbm, radio.noise_psd_dbm_hz, radio.bandwidth_hz,
                   radio.power_floor_dbm, **kw)


@dataclass(frozen=True, eq=False)
class StepResult:
    beams: tuple | None  # (f, w) or None on outage
    rate: float
    snr: float
    state: TrackingState
    update_event: bool
    distance: float
    pilot_slots: int
    budget_exceeded: bool = False


def _serve(context: GridContext, estimate: SkeletonEstimate, ps: PathSkeleton, link: LinkSettings):
    beams = bf.select_beams_skeleton(estimate.measured_power_dbm, ps, link.tx_geom, link.rx_geom,
                                     link.power_floor_dbm, link.tx_codebook, link.rx_codebook)
    if beams is None:
        return None, 0.0, 0.0
    s = bf.snr(context.channel, beams[0], beams[1], link.sigma2)
    return beams, bf.rate(s, link.bandwidth_hz), s


def start_tracking(context: GridContext, db: SkeletonDatabase, perceived_grid: int, threshold: float,
                   link: LinkSettings) -> StepResult:
    """First grid of a trajectory: always query, the result becomes the reference."""
    q = db.query(perceived_grid)
    est = estimate_on_skeleton(context, q.skeleton, link.tx_geom, link.rx_geom, link.tx_power_dbm, link.pilot_model)
    state = TrackingState(q.skeleton, est.channel, threshold, perceived_grid)
    beams, r, s = _serve(context, est, q.skeleton, link)
    return StepResult(beams, r, s, state, True, 0.0, est.pilot_slots, q.budget_exceeded)


def tracking_step(state: TrackingState, context: GridContext, db: SkeletonDatabase, perceived_grid: int,
                  link: LinkSettings, force_update: bool = False) -> StepResult:
    """One grid visit: sound the reference skeleton, re-query if the channel drifted past the threshold.

    Rates are computed with the beams in force after any update.
    """
    est = estimate_on_skeleton(context, state.reference_ps, link.tx_geom, link.rx_geom, link.tx_power_dbm,
                               link.pilot_model)
    d = skeleton_distance(est.channel, state.reference_channel, link.norm, link.relative)
    slots = est.pilot_slots
    ps = state.reference_ps
    exceeded = False
    update = force_update or d > state.threshold
    if update:
        q = db.query(perceived_grid)
        ps = q.skeleton
        exceeded = q.budget_exceeded
        est = estimate_on_skeleton(context, ps, link.tx_geom, link.rx_geom, link.tx_power_dbm, link.pilot_model)
        slots += est.pilot_slots
        state = TrackingState(ps, est.channel, state.threshold, perceived_grid)
    beams, r, s = _serve(context, est, ps, link)
    return StepResult(beams, r, s, state, update, d, slots, exceeded)
