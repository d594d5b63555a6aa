"""Bounded localization error: uniform in a disk of radius r, snapped to a grid ID."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class ErrorModel:
    radius: float
    rng: np.random.Generator

    def __post_init__(self):
        if self.radius < 0:
            raise ConfigError("r", f"error radius must be >= 0, got {self.radius}")


def unit_disk_samples(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` points uniform in the closed unit disk, by rejection from the bounding square.

    Scaling the result by ``r`` gives the same draws for every radius, which keeps
    comparisons across radii on common random numbers.
    """
    out = np.empty((n, 2))
    filled = 0
    while filled < n:
        batch = 2.0 * rng.random((max(8, 2 * (n - filled)), 2)) - 1.0
        batch = batch[np.einsum("ij,ij->i", batch, batch) <= 1.0]
        take = min(len(batch), n - filled)
        out[filled:filled + take] = batch[:take]
        filled += take
    return out


def sample_error(model: ErrorModel) -> np.ndarray:
    """One horizontal error vector, uniform over the disk of radius ``model.radius``."""
    while True:
        e = 2.0 * model.rng.random(2) - 1.0
        if e @ e <= 1.0:
            return model.radius * e


def snap_to_grid(scenario, xy, capture_radius: float | None = None):
    """Nearest grid center to ``xy``; also reports whether ``xy`` fell outside every grid.

    A point counts as outside when it is farther than ``capture_radius`` (default:
    one grid size) from the closest grid center; it is still clamped to that grid.
    """
    centers = scenario.grid_centers[:, :2]
    dist = np.linalg.norm(centers - np.asarray(xy, dtype=float)[:2], axis=1)
    gid = int(np.argmin(dist))
    limit = scenario.grid_size if capture_radius is None else capture_radius
    return gid, bool(dist[gid] > limit)


def perceived_grid(true_position, model: ErrorModel, scenario, error=None):
    """Grid ID the BS believes the user is in: true position plus a disk error, snapped.

    Returns ``(grid_id, out_of_trajectory)``. ``error`` overrides the random draw.
    """
    e = sample_error(model) if error is None else np.asarray(error, dtype=float)
    p_hat = np.asarray(true_position, dtype=float)[:2] + e
    return snap_to_grid(scenario, p_hat)
