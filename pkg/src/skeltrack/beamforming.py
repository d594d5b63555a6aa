"""Analog beam codebooks, beam-pair selection, SNR and achievable rate."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import ArrayGeometry, ChannelMatrix, array_response, sine_coordinates
from .errors import ConfigError, DomainError


@dataclass(frozen=True, eq=False)
class BeamVector:
    weights: np.ndarray
    pointing: tuple  # (phi, theta), radians
    side: str  # "tx" or "rx"
    index: int = -1


@dataclass(frozen=True)
class Sector:
    """Angular sector served by a codebook (radians)."""

    phi_min: float = -math.pi / 2
    phi_max: float = math.pi / 2
    theta_min: float = 0.0
    theta_max: float = math.pi

    def contains(self, phi, theta, tol=1e-9):
        return (self.phi_min - tol <= phi <= self.phi_max + tol) and (self.theta_min - tol <= theta <= self.theta_max + tol)


FRONT_HEMISPHERE = Sector()


@dataclass(frozen=True, eq=False)
class Codebook:
    beams: tuple
    side: str
    geometry: ArrayGeometry

    def __len__(self):
        return len(self.beams)

    @property
    def matrix(self) -> np.ndarray:
        """Codewords as columns, shape ``(geometry.total, len(self))``."""
        return np.column_stack([b.weights for b in self.beams])

    def nearest(self, weights: np.ndarray) -> BeamVector:
        """Codeword with the largest beamforming gain towards ``weights`` (lowest index on ties)."""
        gains = np.abs(self.matrix.conj().T @ weights) ** 2
        return self.beams[int(np.argmax(gains))]


# Gains within this relative distance of the best count as tied. Codewords that differ only
# by a global phase give analytically equal gains that rounding would otherwise split.
TIE_RTOL = 1e-12


def beamwidth_sine(n: int) -> float:
    """3 dB beamwidth estimate of an ``n``-element half-wavelength axis, in sine space."""
    return 2.0 / n


def _angles_from_sines(u: float, v: float, convention: str):
    """Invert ``sine_coordinates`` on the front half space; ``None`` if not a visible direction."""
    if u * u + v * v > 1.0 + 1e-12:
        return None
    if convention == "printed":
        phi = math.acos(max(-1.0, min(1.0, v)))
        s = math.sin(phi)
        if s < 1e-12:
            return (0.0, math.pi / 2) if abs(u) < 1e-12 else None
        phi = math.copysign(phi, u) if u != 0 else phi
        sin_theta = min(1.0, abs(u) / s)
        return phi, math.asin(sin_theta)
    theta = math.acos(max(-1.0, min(1.0, v)))
    s = math.sin(theta)
    if s < 1e-12:
        return (0.0, theta) if abs(u) < 1e-12 else None
    return math.asin(max(-1.0, min(1.0, u / s))), theta


def _axis_points(lo: float, hi: float, spacing: float) -> np.ndarray:
    """Evenly spaced points, ``spacing`` apart, centered on ``[lo, hi]``."""
    count = max(1, int(math.ceil((hi - lo) / spacing - 1e-9)))
    mid = 0.5 * (lo + hi)
    return mid + spacing * (np.arange(count) - (count - 1) / 2)


def build_codebook(geometry: ArrayGeometry, sector: Sector = FRONT_HEMISPHERE, side: str = "tx",
                   samples: int = 181) -> Codebook:
    """Steering-vector grid over ``sector``, spaced one beamwidth apart per array axis."""
    if not (sector.phi_max >= sector.phi_min and sector.theta_max >= sector.theta_min):
        raise ConfigError("sector", "empty angular sector")
    phi = np.linspace(sector.phi_min, sector.phi_max, samples)
    theta = np.linspace(sector.theta_min, sector.theta_max, samples)
    pp, tt = np.meshgrid(phi, theta)
    uu, vv = sine_coordinates(pp, tt, geometry.phase_convention)
    su, sv = beamwidth_sine(geometry.n_cols), beamwidth_sine(geometry.n_rows)
    us = _axis_points(uu.min(), uu.max(), su)
    vs = _axis_points(vv.min(), vv.max(), sv)
    samples_uv = np.column_stack([uu.ravel(), vv.ravel()])
    samples_ang = np.column_stack([pp.ravel(), tt.ravel()])
    pointings = []
    for v in vs:
        for u in us:
            ang = _angles_from_sines(float(u), float(v), geometry.phase_convention)
            if ang is not None and sector.contains(*ang):
                pointings.append(ang)
                continue
            # Grid point outside the sector: if its cell still reaches into the sector, point
            # at the closest sector direction in the cell so the edge is not left uncovered.
            du, dv = np.abs(samples_uv[:, 0] - u), np.abs(samples_uv[:, 1] - v)
            inside = (du <= su / 2) & (dv <= sv / 2)
            if inside.any():
                k = np.flatnonzero(inside)[np.argmin(((du / su) ** 2 + (dv / sv) ** 2)[inside])]
                pointings.append(tuple(float(a) for a in samples_ang[k]))
    if not pointings:
        # sector narrower than one beam: a single beam at its center
        pointings.append((0.5 * (sector.phi_min + sector.phi_max), 0.5 * (sector.theta_min + sector.theta_max)))
    beams = tuple(
        BeamVector(array_response(geometry, p, t), (p, t), side, k) for k, (p, t) in enumerate(pointings)
    )
    return Codebook(beams, side, geometry)


def beam_gain_matrix(H: ChannelMatrix, F: Codebook, W: Codebook) -> np.ndarray:
    """``|w^H H f|^2`` for every pair, shape ``(len(W), len(F))``."""
    return np.abs(W.matrix.conj().T @ H.entries @ F.matrix) ** 2


def select_beams_exhaustive(H: ChannelMatrix, F: Codebook, W: Codebook):
    """Best codebook pair for ``H``; ties go to the lowest Tx index, then the lowest Rx index.

    Gains within ``TIE_RTOL`` (relative) of the maximum are ties.
    """
    if len(F) == 0 or len(W) == 0:
        raise ConfigError("codebook", "empty codebook")
    if H.entries.shape != (W.geometry.total, F.geometry.total):
        raise DomainError(f"channel shape {H.entries.shape} does not match codebooks "
                          f"({W.geometry.total}, {F.geometry.total})")
    gains = beam_gain_matrix(H, F, W).T  # Tx-major, so the first tied entry follows the rule
    best = gains.max()
    k = int(np.argmax(gains >= best - TIE_RTOL * best))
    tx, rx = divmod(k, len(W))
    return F.beams[tx], W.beams[rx]


def select_beams_skeleton(measurements: Sequence[float], skeleton, tx_geom: ArrayGeometry,
                          rx_geom: ArrayGeometry, power_floor_dbm: float = -140.0,
                          tx_codebook: Codebook | None = None, rx_codebook: Codebook | None = None):
    """Steer both ends along the strongest measured skeleton path.

    ``measurements`` are received powers in dBm, aligned with ``skeleton.paths``.
    Returns ``None`` (outage) when every measurement is at or below the floor.
    With codebooks given, the steering vectors are quantized to the nearest codeword.
    """
    powers = np.asarray(measurements, dtype=float)
    if len(powers) != len(skeleton.paths):
        raise DomainError(f"{len(powers)} measurements for {len(skeleton.paths)} skeleton paths")
    if len(powers) == 0 or not np.any(powers > power_floor_dbm):
        return None
    best = int(np.argmax(powers))
    entry = skeleton.paths[best]
    f = BeamVector(array_response(tx_geom, *entry.aod), tuple(entry.aod), "tx", best)
    w = BeamVector(array_response(rx_geom, *entry.aoa), tuple(entry.aoa), "rx", best)
    if tx_codebook is not None:
        f = tx_codebook.nearest(f.weights)
    if rx_codebook is not None:
        w = rx_codebook.nearest(w.weights)
    return f, w


def beamforming_gain(H: ChannelMatrix, f, w) -> float:
    """``|w^H H f|^2``."""
    fw = f.weights if isinstance(f, BeamVector) else f
    ww = w.weights if isinstance(w, BeamVector) else w
    return float(abs(np.vdot(ww, H.entries @ fw)) ** 2)


def sigma2_from_budget(tx_power_dbm: float, noise_psd_dbm_hz: float, bandwidth_hz: float) -> float:
    """Transmit power over noise power (linear)."""
    noise_dbm = noise_psd_dbm_hz + 10.0 * math.log10(bandwidth_hz)
    return 10.0 ** ((tx_power_dbm - noise_dbm) / 10.0)


def snr(H: ChannelMatrix, f, w, sigma2: float) -> float:
    if not sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    return sigma2 * beamforming_gain(H, f, w)


def rate(snr_value, bandwidth: float):
    """Shannon rate ``B*log2(1 + SNR)`` in bit/s."""
    values = np.asarray(snr_value, dtype=float)
    if np.any(values < 0):
        raise DomainError("SNR must be non-negative")
    out = bandwidth * np.log2(1.0 + values)
    return float(out) if out.ndim == 0 else out


def trajectory_rate(rates) -> float:
    """Sum of per-grid rates; exact summation so the result ignores ordering."""
    return math.fsum(float(r) for r in rates)
