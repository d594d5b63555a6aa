"""Urban street geometry, temporary blockers and an image-source path tracer.

Coordinates are meters: ``x``/``y`` span the street plane and ``z`` is height
above ground. Buildings and blockers are axis-aligned boxes standing on the
ground. The tracer returns the direct path plus single-bounce specular
reflections off vertical building faces; every box a path segment crosses adds
its penetration loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path as FsPath
from typing import Sequence

import numpy as np
import yaml

from . import channel
from .errors import ConfigError

DEFAULT_MATERIALS = {"brick": 28.3, "glass": 3.9}

# Reflections are skipped off a face whose plane is closer than this to Tx or
# Rx; the BS is mounted on a wall and would otherwise mirror itself.
MIN_FACE_CLEARANCE = 1.0
SEGMENT_EPS = 1e-6


@dataclass(frozen=True)
class RadioParams:
    frequency_hz: float = 28.0e9
    tx_power_dbm: float = 30.0
    noise_psd_dbm_hz: float = -174.0
    bandwidth_hz: float = 100.0e6
    los_exponent: float = 1.9
    nlos_exponent: float = 4.5
    power_floor_dbm: float = -140.0

    @property
    def noise_power_dbm(self) -> float:
        return self.noise_psd_dbm_hz + 10.0 * math.log10(self.bandwidth_hz)


@dataclass(frozen=True)
class Building:
    xmin: float
    ymin: float
    xmax: float
    ymax: float
    height: float
    material: str = "brick"

    @property
    def lo(self):
        return (self.xmin, self.ymin, 0.0)

    @property
    def hi(self):
        return (self.xmax, self.ymax, self.height)


@dataclass(frozen=True)
class BlockerSpec:
    name: str
    width: float
    height: float
    depth: float | None = None
    weight: float = 1.0

    @property
    def footprint(self):
        return self.width, self.depth if self.depth is not None else self.width


@dataclass(frozen=True)
class Blocker:
    position: tuple  # footprint center at ground level
    width: float
    depth: float
    height: float
    loss_db: float
    kind: str = ""

    @property
    def lo(self):
        x, y, z = self.position
        return (x - self.width / 2, y - self.depth / 2, z)

    @property
    def hi(self):
        x, y, z = self.position
        return (x + self.width / 2, y + self.depth / 2, z + self.height)


@dataclass(frozen=True)
class ObstacleSet:
    blockers: tuple
    seed: int | None = None

    def __len__(self):
        return len(self.blockers)


@dataclass(frozen=True)
class Path:
    """One propagation path; angles in radians, ``aod``/``aoa`` are ``(phi, theta)``."""

    aod: tuple
    aoa: tuple
    length: float
    is_los: bool
    penetration_loss_db: float = 0.0
    reflection_count: int = 0
    reflection_point: tuple | None = None


@dataclass(frozen=True, eq=False)
class Scenario:
    buildings: tuple
    bs_position: np.ndarray
    bs_height: float
    trajectory: np.ndarray
    grid_size: float
    grid_count: int
    grid_centers: np.ndarray
    blocker_density: float
    blocker_specs: tuple
    street_region: tuple
    radio: RadioParams = field(default_factory=RadioParams)
    materials: dict = field(default_factory=lambda: dict(DEFAULT_MATERIALS))
    blocker_loss_choices: tuple = (3.9, 28.3)
    bs_yaw: float = 0.0
    ue_height: float = 1.5
    ue_yaw: float = 0.0
    speed_kmh: float = 5.0
    map_bounds: tuple | None = None
    name: str = "scenario"
    source: dict | None = None

    @property
    def trajectory_length(self) -> float:
        return float(_cumulative_length(self.trajectory)[-1])

    @property
    def street_area(self) -> float:
        return float(sum(_polygon_area(p) for p in self.street_region))

    def grid_of_arclength(self, s: float) -> int:
        return min(max(int(math.floor(s / self.grid_size)), 0), self.grid_count - 1)

    def visit_times(self) -> np.ndarray:
        """Time (s) at which the pedestrian reaches each grid center."""
        speed = self.speed_kmh / 3.6
        s = (np.arange(self.grid_count) + 0.5) * self.grid_size
        s[-1] = 0.5 * ((self.grid_count - 1) * self.grid_size + self.trajectory_length)
        return s / speed


# -- config loading ---------------------------------------------------------


def _require(mapping, key, where):
    if key not in mapping:
        raise ConfigError(f"{where}.{key}" if where else key, "missing required field")
    return mapping[key]


def _positive(value, name):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected a number, got {value!r}") from None
    if not value > 0:
        raise ConfigError(name, f"must be strictly positive, got {value}")
    return value


def _cumulative_length(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def point_at(points: np.ndarray, s: float) -> np.ndarray:
    """Point at arclength ``s`` along a polyline."""
    cum = _cumulative_length(points)
    s = min(max(s, 0.0), cum[-1])
    k = int(np.searchsorted(cum, s, side="right")) - 1
    k = min(k, len(points) - 2)
    seg = cum[k + 1] - cum[k]
    t = 0.0 if seg == 0 else (s - cum[k]) / seg
    return points[k] + t * (points[k + 1] - points[k])


def grid_centers(points: np.ndarray, grid_size: float):
    """Grid count and the 2-D center of each grid along the polyline.

    Grid ``k`` covers arclength ``[k*g, min((k+1)*g, length)]``; the last grid
    is truncated when the length is not a multiple of the grid size.
    """
    length = float(_cumulative_length(points)[-1])
    count = max(1, int(math.ceil(length / grid_size - 1e-9)))
    centers = []
    for k in range(count):
        lo = k * grid_size
        hi = min((k + 1) * grid_size, length)
        centers.append(point_at(points, 0.5 * (lo + hi)))
    return count, np.array(centers)


def _polygon_area(poly) -> float:
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _points_in_polygon(points: np.ndarray, poly) -> np.ndarray:
    p = np.asarray(poly, dtype=float)
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    j = len(p) - 1
    for i in range(len(p)):
        xi, yi = p[i]
        xj, yj = p[j]
        crosses = (yi > y) != (yj > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = (xj - xi) * (y - yi) / (yj - yi) + xi
        inside ^= crosses & (x < x_cross)
        j = i
    return inside


def _distance_to_face(xy, b: Building) -> float:
    """Horizontal distance from ``xy`` to the footprint boundary of ``b``."""
    x, y = xy
    dx = max(b.xmin - x, 0.0, x - b.xmax)
    dy = max(b.ymin - y, 0.0, y - b.ymax)
    if dx == 0 and dy == 0:
        return -min(x - b.xmin, b.xmax - x, y - b.ymin, b.ymax - y)
    return math.hypot(dx, dy)


def build_scenario(config: dict) -> Scenario:
    """Validate a scenario description (as parsed from YAML) and compute the grid."""
    if not isinstance(config, dict):
        raise ConfigError("scenario", "expected a mapping")
    radio_cfg = dict(config.get("radio", {}))
    try:
        radio = RadioParams(**{k: float(v) for k, v in radio_cfg.items()})
    except TypeError as exc:
        raise ConfigError("radio", str(exc)) from None
    for name in ("frequency_hz", "bandwidth_hz", "los_exponent", "nlos_exponent"):
        _positive(getattr(radio, name), f"radio.{name}")

    materials = dict(DEFAULT_MATERIALS)
    materials.update({k: float(v) for k, v in config.get("materials", {}).items()})
    for k, v in materials.items():
        if v < 0:
            raise ConfigError(f"materials.{k}", f"penetration loss must be >= 0 dB, got {v}")

    buildings = []
    for i, b in enumerate(config.get("buildings", [])):
        where = f"buildings[{i}]"
        try:
            bld = Building(
                float(b["xmin"]), float(b["ymin"]), float(b["xmax"]), float(b["ymax"]),
                float(b["height"]), str(b.get("material", "brick")),
            )
        except KeyError as exc:
            raise ConfigError(where, f"missing field {exc.args[0]}") from None
        if not (bld.xmax > bld.xmin and bld.ymax > bld.ymin):
            raise ConfigError(where, "footprint must have positive extent")
        _positive(bld.height, f"{where}.height")
        if bld.material not in materials:
            raise ConfigError(f"{where}.material", f"unknown material {bld.material!r}")
        buildings.append(bld)

    bs = _require(config, "bs", "")
    bs_xy = np.asarray(_require(bs, "position", "bs"), dtype=float)[:2]
    bs_height = _positive(_require(bs, "height", "bs"), "bs.height")
    bs_yaw = math.radians(float(bs.get("boresight_deg", 0.0)))
    if buildings:
        gap = min(abs(_distance_to_face(bs_xy, b)) for b in buildings)
        if gap > float(bs.get("max_wall_gap", 1.0)):
            raise ConfigError("bs.position", f"BS is {gap:.2f} m from the nearest building face")

    traj = _require(config, "trajectory", "")
    points = np.asarray(_require(traj, "points", "trajectory"), dtype=float)
    if points.ndim != 2 or points.shape[0] < 2 or points.shape[1] != 2:
        raise ConfigError("trajectory.points", "need at least two [x, y] points")
    if not _cumulative_length(points)[-1] > 0:
        raise ConfigError("trajectory.points", "trajectory has zero length")
    grid_size = _positive(_require(traj, "grid_size", "trajectory"), "trajectory.grid_size")
    speed = _positive(traj.get("speed_kmh", 5.0), "trajectory.speed_kmh")

    bounds = config.get("map_bounds")
    if bounds is not None:
        xmin, ymin, xmax, ymax = (float(v) for v in bounds)
        if not (np.all(points[:, 0] >= xmin) and np.all(points[:, 0] <= xmax)
                and np.all(points[:, 1] >= ymin) and np.all(points[:, 1] <= ymax)):
            raise ConfigError("trajectory.points", "trajectory leaves map_bounds")
        bounds = (xmin, ymin, xmax, ymax)

    count, centers2d = grid_centers(points, grid_size)
    ue = config.get("ue", {})
    ue_height = _positive(ue.get("height", 1.5), "ue.height")
    ue_yaw = math.radians(float(ue.get("boresight_deg", 0.0)))
    for b in buildings:
        if ue_height < b.height and np.any(
            (centers2d[:, 0] > b.xmin) & (centers2d[:, 0] < b.xmax)
            & (centers2d[:, 1] > b.ymin) & (centers2d[:, 1] < b.ymax)
        ):
            raise ConfigError("trajectory.points", "a grid center lies inside a building")
    centers = np.column_stack([centers2d, np.full(count, ue_height)])

    blk = config.get("blockers", {})
    density = float(blk.get("density_per_m2", 0.0))
    if density < 0:
        raise ConfigError("blockers.density_per_m2", f"must be >= 0, got {density}")
    specs = []
    for i, s in enumerate(blk.get("types", [])):
        where = f"blockers.types[{i}]"
        spec = BlockerSpec(
            str(s.get("name", f"type{i}")),
            _positive(s.get("width"), f"{where}.width"),
            _positive(s.get("height"), f"{where}.height"),
            _positive(s["depth"], f"{where}.depth") if "depth" in s else None,
            float(s.get("weight", 1.0)),
        )
        if spec.weight < 0:
            raise ConfigError(f"{where}.weight", "must be >= 0")
        specs.append(spec)
    if density > 0 and not specs:
        raise ConfigError("blockers.types", "density > 0 needs at least one blocker type")
    region = tuple(tuple(map(tuple, np.asarray(p, dtype=float))) for p in blk.get("street_region", []))
    if density > 0 and not region:
        raise ConfigError("blockers.street_region", "density > 0 needs a street region")
    losses = tuple(float(v) for v in blk.get("loss_db_choices", (materials["glass"], materials["brick"])))
    if any(v < 0 for v in losses) or not losses:
        raise ConfigError("blockers.loss_db_choices", "need non-negative losses")

    return Scenario(
        buildings=tuple(buildings),
        bs_position=np.array([bs_xy[0], bs_xy[1], bs_height]),
        bs_height=bs_height,
        trajectory=points,
        grid_size=grid_size,
        grid_count=count,
        grid_centers=centers,
        blocker_density=density,
        blocker_specs=tuple(specs),
        street_region=region,
        radio=radio,
        materials=materials,
        blocker_loss_choices=losses,
        bs_yaw=bs_yaw,
        ue_height=ue_height,
        ue_yaw=ue_yaw,
        speed_kmh=speed,
        map_bounds=bounds,
        name=str(config.get("name", "scenario")),
        source=config,
    )


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return build_scenario(yaml.safe_load(fh))


def default_scenario_config() -> dict:
    text = resources.files("skeltrack.data").joinpath("default_scenario.yaml").read_text()
    return yaml.safe_load(text)


def default_scenario() -> Scenario:
    return build_scenario(default_scenario_config())


def truncate_trajectory(config: dict, grid_count: int) -> dict:
    """Copy of ``config`` whose trajectory is cut to exactly ``grid_count`` grids."""
    cfg = yaml.safe_load(yaml.safe_dump(config))
    points = np.asarray(cfg["trajectory"]["points"], dtype=float)
    length = grid_count * float(cfg["trajectory"]["grid_size"])
    cum = _cumulative_length(points)
    if length > cum[-1] + 1e-9:
        raise ConfigError("trajectory.points", f"trajectory shorter than {grid_count} grids")
    k = int(np.searchsorted(cum, length, side="left"))
    cut = [p.tolist() for p in points[:k]] + [point_at(points, length).tolist()]
    cfg["trajectory"]["points"] = cut
    return cfg


# -- blockers ---------------------------------------------------------------


def sample_obstacles(scenario: Scenario, seed) -> ObstacleSet:
    """Poisson number of blockers placed uniformly over the street region.

    ``seed`` may be an int or anything accepted by ``np.random.default_rng``.
    """
    rng = np.random.default_rng(seed)
    label = seed if isinstance(seed, (int, np.integer)) else None
    if scenario.blocker_density == 0 or not scenario.street_region:
        return ObstacleSet((), label)
    areas = np.array([_polygon_area(p) for p in scenario.street_region])
    count = int(rng.poisson(scenario.blocker_density * areas.sum()))
    weights = np.array([s.weight for s in scenario.blocker_specs], dtype=float)
    weights = weights / weights.sum()
    blockers = []
    for _ in range(count):
        poly = scenario.street_region[int(rng.choice(len(areas), p=areas / areas.sum()))]
        xy = _uniform_in_polygon(rng, poly)
        spec = scenario.blocker_specs[int(rng.choice(len(weights), p=weights))]
        width, depth = spec.footprint
        loss = float(scenario.blocker_loss_choices[int(rng.integers(len(scenario.blocker_loss_choices)))])
        blockers.append(Blocker((float(xy[0]), float(xy[1]), 0.0), width, depth, spec.height, loss, spec.name))
    return ObstacleSet(tuple(blockers), label)


def _uniform_in_polygon(rng, poly):
    p = np.asarray(poly, dtype=float)
    lo, hi = p.min(axis=0), p.max(axis=0)
    while True:
        xy = lo + (hi - lo) * rng.random(2)
        if _points_in_polygon(xy[None, :], p)[0]:
            return xy


# -- geometry ---------------------------------------------------------------


def segment_box_hits(p0: np.ndarray, p1: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                     eps: float = SEGMENT_EPS) -> np.ndarray:
    """Boolean ``(S, B)`` matrix: does segment ``s`` pass through the interior of box ``b``.

    Slab test; touching a face (zero-length overlap) does not count.
    """
    p0 = np.asarray(p0, dtype=float)[:, None, :]
    d = (np.asarray(p1, dtype=float)[:, None, :] - p0)
    lo = np.asarray(lo, dtype=float)[None, :, :]
    hi = np.asarray(hi, dtype=float)[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - p0) / d
        t2 = (hi - p0) / d
    parallel = d == 0
    inside_slab = (p0 >= lo) & (p0 <= hi)
    tmin = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), np.minimum(t1, t2))
    tmax = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), np.maximum(t1, t2))
    enter = np.maximum(tmin.max(axis=2), 0.0)
    leave = np.minimum(tmax.min(axis=2), 1.0)
    return (leave - enter) > eps


def local_angles(vec, yaw: float):
    """``(phi, theta)`` of a direction expressed in a frame rotated by ``yaw`` about z."""
    x, y, z = vec
    c, s = math.cos(yaw), math.sin(yaw)
    xl, yl = c * x + s * y, -s * x + c * y
    r = math.sqrt(x * x + y * y + z * z)
    phi = math.atan2(yl, xl)
    theta = math.acos(max(-1.0, min(1.0, z / r)))
    return phi, theta


def quantize_angles(phi: float, theta: float, resolution: float):
    if resolution > 0:
        phi = round(phi / resolution) * resolution
        theta = round(theta / resolution) * resolution
    if phi >= math.pi:
        phi -= 2 * math.pi
    if phi < -math.pi:
        phi += 2 * math.pi
    return phi, min(max(theta, 0.0), math.pi)


def _faces(b: Building):
    """Vertical faces as (axis, plane coordinate, outward sign)."""
    return ((0, b.xmin, -1.0), (0, b.xmax, 1.0), (1, b.ymin, -1.0), (1, b.ymax, 1.0))


@dataclass(frozen=True, eq=False)
class _Candidate:
    path: Path
    segments: np.ndarray  # (S, 2, 3)


def candidate_paths(scenario: Scenario, rx_position, angular_resolution: float) -> list:
    """Blocker-free direct and single-bounce paths with building penetration losses applied.

    ``angular_resolution`` is in radians.
    """
    tx = np.asarray(scenario.bs_position, dtype=float)
    rx = np.asarray(rx_position, dtype=float)
    geo = []  # (segments, is_los, reflection_point, length)
    geo.append((np.array([[tx, rx]]), True, None, float(np.linalg.norm(rx - tx))))
    for b in scenario.buildings:
        for axis, plane, sign in _faces(b):
            if sign * (tx[axis] - plane) < MIN_FACE_CLEARANCE or sign * (rx[axis] - plane) < MIN_FACE_CLEARANCE:
                continue
            image = tx.copy()
            image[axis] = 2 * plane - tx[axis]
            t = (plane - image[axis]) / (rx[axis] - image[axis])
            point = image + t * (rx - image)
            other = 1 - axis
            lo_o, hi_o = (b.ymin, b.ymax) if axis == 0 else (b.xmin, b.xmax)
            if not (lo_o <= point[other] <= hi_o and 0.0 <= point[2] <= b.height):
                continue
            geo.append((np.array([[tx, point], [point, rx]]), False, tuple(point), float(np.linalg.norm(rx - image))))

    lo = np.array([b.lo for b in scenario.buildings], dtype=float).reshape(-1, 3)
    hi = np.array([b.hi for b in scenario.buildings], dtype=float).reshape(-1, 3)
    loss = np.array([scenario.materials[b.material] for b in scenario.buildings], dtype=float)
    out = []
    for segments, is_los, point, length in geo:
        if len(loss):
            hits = segment_box_hits(segments[:, 0], segments[:, 1], lo, hi).any(axis=0)
            pen = float(loss[hits].sum())
        else:
            pen = 0.0
        first = segments[0, 1] - segments[0, 0]
        last = segments[-1, 0] - segments[-1, 1]
        aod = quantize_angles(*local_angles(first, scenario.bs_yaw), angular_resolution)
        aoa = quantize_angles(*local_angles(last, scenario.ue_yaw), angular_resolution)
        path = Path(aod, aoa, length, is_los, pen, 0 if is_los else 1, point)
        out.append(_Candidate(path, segments))
    return out


def blocker_losses(candidates: Sequence[_Candidate], obstacles: ObstacleSet) -> np.ndarray:
    """Extra penetration loss (dB) each candidate picks up from the blockers."""
    extra = np.zeros(len(candidates))
    if not obstacles.blockers or not candidates:
        return extra
    lo = np.array([b.lo for b in obstacles.blockers], dtype=float)
    hi = np.array([b.hi for b in obstacles.blockers], dtype=float)
    loss = np.array([b.loss_db for b in obstacles.blockers], dtype=float)
    seg = np.concatenate([c.segments for c in candidates])
    owner = np.repeat(np.arange(len(candidates)), [len(c.segments) for c in candidates])
    hits = segment_box_hits(seg[:, 0], seg[:, 1], lo, hi)
    per_path = np.zeros((len(candidates), len(loss)), dtype=bool)
    np.logical_or.at(per_path, owner, hits)
    return per_path @ loss


def path_power_dbm(path: Path, radio: RadioParams) -> float:
    return radio.tx_power_dbm - channel.path_loss_db(path, radio.frequency_hz, radio.los_exponent, radio.nlos_exponent)


def rank_paths(paths: Sequence[Path], radio: RadioParams, max_paths: int, power_floor_dbm: float | None = None):
    """Drop paths below the power floor and keep the ``max_paths`` strongest (stable order on ties)."""
    floor = radio.power_floor_dbm if power_floor_dbm is None else power_floor_dbm
    powers = [path_power_dbm(p, radio) for p in paths]
    order = sorted((i for i, pw in enumerate(powers) if pw >= floor), key=lambda i: -powers[i])
    return [paths[i] for i in order[:max_paths]]


def trace_paths(
    scenario: Scenario,
    obstacles: ObstacleSet,
    rx_position,
    max_paths: int,
    angular_resolution: float = 0.1,
    power_floor_dbm: float | None = None,
) -> list:
    """Up to ``max_paths`` strongest paths to ``rx_position``, strongest first.

    ``angular_resolution`` is in degrees. An empty list means outage.
    """
    if max_paths < 1:
        raise ConfigError("max_paths", f"must be >= 1, got {max_paths}")
    cands = candidate_paths(scenario, rx_position, math.radians(angular_resolution))
    extra = blocker_losses(cands, obstacles)
    paths = [replace(c.path, penetration_loss_db=c.path.penetration_loss_db + float(e)) for c, e in zip(cands, extra)]
    return rank_paths(paths, scenario.radio, max_paths, power_floor_dbm)


def scenario_summary(scenario: Scenario) -> dict:
    return {
        "name": scenario.name,
        "grid_count": scenario.grid_count,
        "grid_size_m": scenario.grid_size,
        "trajectory_length_m": round(scenario.trajectory_length, 6),
        "buildings": len(scenario.buildings),
        "bs_position_m": [float(v) for v in scenario.bs_position],
        "street_area_m2": round(scenario.street_area, 3),
        "expected_blockers": round(scenario.blocker_density * scenario.street_area, 3),
    }


def save_scenario_config(config: dict, path) -> None:
    FsPath(path).write_text(yaml.safe_dump(config, sort_keys=False))
