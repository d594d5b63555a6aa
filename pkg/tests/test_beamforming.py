import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skeltrack import beamforming as bf
from skeltrack.channel import ArrayGeometry, ChannelMatrix, PathGain, array_response, assemble_channel
from skeltrack.errors import ConfigError, DomainError
from skeltrack.scenario import Path
from skeltrack.skeleton import PathSkeleton, SkeletonPath


def brute_force(H, F, W):
    g = {(i, j): abs(np.vdot(w.weights, H.entries @ f.weights)) ** 2
         for i, f in enumerate(F.beams) for j, w in enumerate(W.beams)}
    best = max(g.values())
    return min(k for k, v in g.items() if v >= best * (1 - bf.TIE_RTOL))


def test_single_element_codebook_is_one_beam():
    cb = bf.build_codebook(ArrayGeometry(1, 1))
    assert len(cb) == 1
    assert cb.beams[0].weights[0] == pytest.approx(1.0)


def test_codewords_unit_norm():
    cb = bf.build_codebook(ArrayGeometry(8, 8))
    assert np.allclose(np.linalg.norm(cb.matrix, axis=0), 1.0, atol=1e-12)


def test_codebook_grows_with_columns():
    n8 = len(bf.build_codebook(ArrayGeometry(8, 4)))
    n16 = len(bf.build_codebook(ArrayGeometry(16, 4)))
    assert 1.6 <= n16 / n8 <= 2.4


def _axis_floor(n):
    # gain of an n-element axis half a beam spacing (1/n in sine space) off a codeword
    return 1.0 if n == 1 else 1.0 / (n * math.sin(math.pi / (2 * n))) ** 2


@pytest.mark.parametrize("convention", ["printed", "conventional"])
@pytest.mark.parametrize("shape", [(8, 8), (4, 4), (8, 4), (4, 2), (2, 2)])
def test_codebook_covers_hemisphere(shape, convention):
    g = ArrayGeometry(*shape, convention)
    cb = bf.build_codebook(g)
    sec = bf.FRONT_HEMISPHERE
    dirs = [(p, t) for p in np.linspace(sec.phi_min, sec.phi_max, 61)
            for t in np.linspace(sec.theta_min, sec.theta_max, 61)]
    A = np.column_stack([array_response(g, p, t) for p, t in dirs])
    worst = (np.abs(cb.matrix.conj().T @ A) ** 2).max(axis=0).min()
    assert worst >= _axis_floor(shape[0]) * _axis_floor(shape[1]) - 1e-9


def test_sector_restricts_pointings():
    sec = bf.Sector(-0.5, 0.5, 1.0, 2.0)
    cb = bf.build_codebook(ArrayGeometry(8, 8), sec)
    assert all(sec.contains(*b.pointing) for b in cb.beams)
    with pytest.raises(ConfigError):
        bf.build_codebook(ArrayGeometry(4, 4), bf.Sector(1.0, 0.0))


def test_zero_channel_picks_first_pair():
    F = bf.build_codebook(ArrayGeometry(4, 2))
    W = bf.build_codebook(ArrayGeometry(2, 2), side="rx")
    f, w = bf.select_beams_exhaustive(ChannelMatrix(np.zeros((4, 8), complex)), F, W)
    assert (f.index, w.index) == (0, 0)
    assert bf.beamforming_gain(ChannelMatrix(np.zeros((4, 8), complex)), f, w) == 0.0


def test_matched_single_path_picks_its_pointings():
    tx, rx = ArrayGeometry(4, 4), ArrayGeometry(2, 2)
    F = bf.build_codebook(tx)
    W = bf.build_codebook(rx, side="rx")
    ft, wt = F.beams[len(F) // 2], W.beams[-1]
    h = 0.3 - 0.8j
    H = assemble_channel([Path(ft.pointing, wt.pointing, 10.0, True)], [PathGain(1.0, h)], tx, rx)
    f, w = bf.select_beams_exhaustive(H, F, W)
    assert (f.index, w.index) == (ft.index, wt.index)
    assert bf.beamforming_gain(H, f, w) == pytest.approx(16 * 4 * abs(h) ** 2, rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_exhaustive_matches_double_loop(seed):
    rng = np.random.default_rng(seed)
    F = bf.build_codebook(ArrayGeometry(4, 2))
    W = bf.build_codebook(ArrayGeometry(2, 2), side="rx")
    H = ChannelMatrix(rng.standard_normal((4, 8)) + 1j * rng.standard_normal((4, 8)))
    f, w = bf.select_beams_exhaustive(H, F, W)
    assert (f.index, w.index) == brute_force(H, F, W)


def test_phase_rotated_codewords_tie():
    rx = ArrayGeometry(1, 1)
    W = bf.Codebook(tuple(bf.BeamVector(np.array([np.exp(1j * a)]), (0.0, 0.0), "rx", k)
                          for k, a in enumerate([0.3, 1.7, 2.9])), "rx", rx)
    F = bf.build_codebook(ArrayGeometry(4, 1))
    H = ChannelMatrix(np.array([[0.3 + 0.1j, -1.0, 0.2j, 0.5]]))
    f, w = bf.select_beams_exhaustive(H, F, W)
    assert w.index == 0


def test_exhaustive_shape_mismatch():
    F = bf.build_codebook(ArrayGeometry(4, 2))
    W = bf.build_codebook(ArrayGeometry(2, 2), side="rx")
    with pytest.raises(DomainError):
        bf.select_beams_exhaustive(ChannelMatrix(np.zeros((3, 8), complex)), F, W)


def _skeleton(*dirs):
    return PathSkeleton(0, tuple(SkeletonPath(a, b, 1.0) for a, b in dirs))


def test_skeleton_selection_single_path():
    tx, rx = ArrayGeometry(4, 4), ArrayGeometry(2, 2)
    ps = _skeleton(((0.1, 1.2), (0.3, 1.4)))
    f, w = bf.select_beams_skeleton([-80.0], ps, tx, rx)
    assert f.pointing == (0.1, 1.2) and w.pointing == (0.3, 1.4)


def test_skeleton_selection_tie_goes_to_first():
    tx, rx = ArrayGeometry(2, 2), ArrayGeometry(1, 1)
    ps = _skeleton(((0.1, 1.0), (0.1, 1.0)), ((0.2, 1.0), (0.2, 1.0)), ((0.3, 1.0), (0.3, 1.0)))
    f, _ = bf.select_beams_skeleton([3.0, 3.0, 1.0], ps, tx, rx)
    assert f.index == 0


def test_skeleton_selection_skips_blocked_los():
    tx, rx = ArrayGeometry(4, 4), ArrayGeometry(2, 2)
    ps = _skeleton(((0.0, 1.5), (0.0, 1.5)), ((0.8, 1.5), (-0.8, 1.5)))
    # LoS at -115 dBm before the 28.3 dB brick loss puts it below the floor
    los = -115.0 - 28.3
    assert los < -140.0
    f, w = bf.select_beams_skeleton([los, -120.0], ps, tx, rx)
    assert f.pointing == (0.8, 1.5)
    assert bf.select_beams_skeleton([los, -141.0], ps, tx, rx) is None


def test_skeleton_selection_quantized_to_codebook():
    tx, rx = ArrayGeometry(4, 4), ArrayGeometry(2, 2)
    F, W = bf.build_codebook(tx), bf.build_codebook(rx, side="rx")
    ps = _skeleton(((0.11, 1.2), (0.3, 1.4)))
    f, w = bf.select_beams_skeleton([-90.0], ps, tx, rx, tx_codebook=F, rx_codebook=W)
    assert any(f is b for b in F.beams) and any(w is b for b in W.beams)


def test_measurement_count_mismatch():
    with pytest.raises(DomainError):
        bf.select_beams_skeleton([1.0, 2.0], _skeleton(((0, 1), (0, 1))), ArrayGeometry(2, 2), ArrayGeometry(1, 1))


def test_noise_budget_124_db():
    s2 = bf.sigma2_from_budget(30.0, -174.0, 100e6)
    assert 10 * math.log10(s2) == pytest.approx(124.0, abs=1e-9)


def test_snr_db_addition():
    tx, rx = ArrayGeometry(1, 1), ArrayGeometry(1, 1)
    H = ChannelMatrix(np.array([[10 ** (-114 / 20)]], complex))
    s = bf.snr(H, np.ones(1), np.ones(1), bf.sigma2_from_budget(30.0, -174.0, 100e6))
    assert 10 * math.log10(s) == pytest.approx(10.0, abs=1e-9)
    assert bf.snr(ChannelMatrix(np.zeros((1, 1), complex)), np.ones(1), np.ones(1), 1e12) == 0.0
    with pytest.raises(DomainError):
        bf.snr(H, np.ones(1), np.ones(1), 0.0)
    del tx, rx


def test_rate_values():
    assert bf.rate(0.0, 100e6) == 0.0
    assert bf.rate(10.0, 100e6) == pytest.approx(1e8 * math.log2(11), rel=1e-15)
    np.testing.assert_allclose(bf.rate(np.array([0.0, 1.0]), 1e6), [0.0, 1e6])
    with pytest.raises(DomainError):
        bf.rate(-1.0, 1e6)


def test_trajectory_rate_sums():
    assert bf.trajectory_rate([0.2e9, 0.3e9]) == pytest.approx(0.5e9)


@given(st.lists(st.floats(0, 1e10), max_size=60), st.randoms())
def test_trajectory_rate_order_free(rates, rnd):
    shuffled = list(rates)
    rnd.shuffle(shuffled)
    assert bf.trajectory_rate(rates) == bf.trajectory_rate(shuffled)
