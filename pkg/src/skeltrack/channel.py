"""Narrowband geometric MIMO channel built from a traced path list.

The channel between a transmitter with ``N_tx`` antennas and a receiver with
``N_rx`` antennas is a sum of rank-one path terms

    H = sqrt(N_tx * N_rx / L) * sum_l h_l * a_rx(aoa_l) * a_tx(aod_l)^H

with half-wavelength uniform planar arrays on both ends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError

SPEED_OF_LIGHT = 3.0e8  # m/s; the 1 m free-space reference is quoted with this value

PHASE_CONVENTIONS = ("printed", "conventional")


@dataclass(frozen=True)
class ArrayGeometry:
    """Half-wavelength UPA with ``n_cols`` columns and ``n_rows`` rows.

    ``phase_convention`` selects the vertical phase term: ``"printed"`` uses
    ``n_y * cos(phi)``, ``"conventional"`` uses ``n_y * cos(theta)`` (the usual
    yz-plane array). Elements are enumerated row-major with ``n_x`` fastest.
    """

    n_cols: int
    n_rows: int
    phase_convention: str = "printed"

    def __post_init__(self):
        if self.n_cols < 1 or self.n_rows < 1:
            raise ConfigError("array", f"array dimensions must be >= 1, got {self.n_cols}x{self.n_rows}")
        if self.phase_convention not in PHASE_CONVENTIONS:
            raise ConfigError("array.phase_convention", f"unknown convention {self.phase_convention!r}")

    @property
    def total(self) -> int:
        return self.n_cols * self.n_rows

    def with_convention(self, convention: str) -> "ArrayGeometry":
        return ArrayGeometry(self.n_cols, self.n_rows, convention)


@dataclass(frozen=True)
class PathGain:
    """Large-scale power gain ``beta`` and the small-scale coefficient ``h``."""

    beta: float
    h: complex


@dataclass(eq=False)
class ChannelMatrix:
    entries: np.ndarray
    grid_id: int = -1

    @property
    def shape(self):
        return self.entries.shape

    def frobenius(self) -> float:
        return float(np.linalg.norm(self.entries))


def sine_coordinates(phi, theta, convention="printed"):
    """Map angles to the two phase-progression coordinates ``(u, v)``.

    Element ``(n_x, n_y)`` of the array response has phase ``pi*(n_x*u + n_y*v)``.
    """
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    u = np.sin(theta) * np.sin(phi)
    if convention == "printed":
        v = np.cos(phi)
    else:
        v = np.cos(theta)
    return u, v


def response_from_sines(geometry: ArrayGeometry, u, v) -> np.ndarray:
    """Array response for phase coordinates ``(u, v)``.

    Scalars give a vector of length ``geometry.total``; arrays of shape ``(K,)``
    give a ``(total, K)`` matrix with one steering vector per column.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nx = np.tile(np.arange(geometry.n_cols), geometry.n_rows)
    ny = np.repeat(np.arange(geometry.n_rows), geometry.n_cols)
    phase = np.multiply.outer(nx, u) + np.multiply.outer(ny, v)
    return np.exp(1j * np.pi * phase) / math.sqrt(geometry.total)


def array_response(geometry: ArrayGeometry, phi, theta) -> np.ndarray:
    """Unit-norm UPA steering vector for horizontal angle ``phi`` and vertical angle ``theta``."""
    u, v = sine_coordinates(phi, theta, geometry.phase_convention)
    return response_from_sines(geometry, u, v)


def free_space_loss_db(frequency: float, distance: float = 1.0) -> float:
    return 20.0 * math.log10(4.0 * math.pi * frequency * distance / SPEED_OF_LIGHT)


def path_loss_db(path, frequency: float, los_exponent: float, nlos_exponent: float) -> float:
    """Close-in (1 m reference) path loss plus the path's penetration losses, in dB."""
    if not path.length > 0:
        raise DomainError(f"path length must be positive, got {path.length}")
    n = los_exponent if path.is_los else nlos_exponent
    return free_space_loss_db(frequency) + 10.0 * n * math.log10(path.length) + path.penetration_loss_db


def large_scale_gain(path, frequency: float, los_exponent: float = 1.9, nlos_exponent: float = 4.5) -> float:
    """Linear power gain ``beta`` of a path."""
    return 10.0 ** (-path_loss_db(path, frequency, los_exponent, nlos_exponent) / 10.0)


def unit_fading(rng: np.random.Generator, size=None):
    """Circularly-symmetric complex Gaussian samples with unit variance."""
    re = rng.standard_normal(size)
    im = rng.standard_normal(size)
    return (re + 1j * im) / math.sqrt(2.0)


def sample_fading(beta: float, rng: np.random.Generator) -> complex:
    if beta < 0:
        raise DomainError(f"beta must be non-negative, got {beta}")
    if beta == 0:
        return 0j
    return complex(math.sqrt(beta) * unit_fading(rng))


def assemble_channel(
    paths: Sequence,
    gains: Sequence[PathGain],
    tx_geom: ArrayGeometry,
    rx_geom: ArrayGeometry,
    grid_id: int = -1,
) -> ChannelMatrix:
    """Sum the rank-one contributions of ``paths`` into an ``N_rx x N_tx`` matrix.

    An empty path list is an outage channel and yields the zero matrix.
    """
    if len(paths) != len(gains):
        raise DomainError(f"{len(paths)} paths but {len(gains)} gains")
    if not paths:
        return ChannelMatrix(np.zeros((rx_geom.total, tx_geom.total), dtype=complex), grid_id)
    aod = np.array([p.aod for p in paths], dtype=float)
    aoa = np.array([p.aoa for p in paths], dtype=float)
    a_tx = array_response(tx_geom, aod[:, 0], aod[:, 1])
    a_rx = array_response(rx_geom, aoa[:, 0], aoa[:, 1])
    h = np.array([g.h for g in gains], dtype=complex)
    scale = math.sqrt(tx_geom.total * rx_geom.total / len(paths))
    entries = scale * (a_rx * h) @ a_tx.conj().T
    return ChannelMatrix(entries, grid_id)


def dump_channel(channel: ChannelMatrix) -> str:
    """Text dump of ``channel``: a header line ``rows cols`` then one line per row of ``re,im`` pairs."""
    rows, cols = channel.entries.shape
    lines = [f"{rows} {cols}"]
    for row in channel.entries:
        lines.append(" ".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in row))
    return "\n".join(lines) + "\n"


def load_channel(text: str, grid_id: int = -1) -> ChannelMatrix:
    lines = text.strip().splitlines()
    rows, cols = (int(t) for t in lines[0].split())
    entries = np.zeros((rows, cols), dtype=complex)
    for i, line in enumerate(lines[1 : rows + 1]):
        for j, pair in enumerate(line.split()):
            re, im = pair.split(",")
            entries[i, j] = complex(float(re), float(im))
    return ChannelMatrix(entries, grid_id)
