"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""

import cmath
import math
import time

import numpy as np
import pytest
from scipy import stats

from skeltrack import beamforming as bf
from skeltrack import harness
from skeltrack.channel import ArrayGeometry, ChannelMatrix, PathGain, assemble_channel
from skeltrack.localization import ErrorModel, sample_error, unit_disk_samples
from skeltrack.optimize import evaluate, golden_section_search, max_tolerable_radius, optimize_threshold, \
    suggest_bracket
from skeltrack.scenario import Path, build_scenario, truncate_trajectory
from skeltrack.simulation import Simulator, antenna_preset

PRESETS = ("narrow", "wide")


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} | {detail}")
    return emit


def _preset_sim(name):
    cfg = harness.packaged_config(name)
    return cfg, harness.make_simulator(cfg)


@pytest.fixture(scope="module")
def presets():
    out = {}
    for name in PRESETS:
        cfg, sim = _preset_sim(name)
        tuned = optimize_threshold(sim, cfg.U_max, cfg.delta, cfg.bracket, cfg.tol, cfg.trials, cfg.seed, 0.0)
        out[name] = (cfg, sim, tuned)
    return out


# -- 1: exhaustive beam selection vs brute force ------------------------------


def _random_geometry(rng, max_total):
    while True:
        c, r = int(rng.integers(1, max_total + 1)), int(rng.integers(1, max_total + 1))
        if c * r <= max_total:
            return ArrayGeometry(c, r)


def _random_codebook(rng, geom, side):
    if rng.random() < 0.5:
        lo = rng.uniform(-math.pi / 2, 0.0)
        t0 = rng.uniform(0.0, math.pi / 2)
        sector = bf.Sector(lo, lo + rng.uniform(0.1, math.pi / 2), t0, t0 + rng.uniform(0.1, math.pi / 2))
        return bf.build_codebook(geom, sector, side)
    n = int(rng.integers(1, 33))
    beams = []
    for k in range(n):
        if k and rng.random() < 0.2:  # repeated codeword to exercise the tie rule
            w = beams[int(rng.integers(k))].weights
        else:
            w = rng.standard_normal(geom.total) + 1j * rng.standard_normal(geom.total)
            w = w / np.linalg.norm(w)
        beams.append(bf.BeamVector(w, (0.0, 0.0), side, k))
    return bf.Codebook(tuple(beams), side, geom)


def _brute_force(H, F, W):
    gains = {}
    for i in range(len(F)):
        for j in range(len(W)):
            gains[i, j] = abs(np.vdot(W.beams[j].weights, H.entries @ F.beams[i].weights)) ** 2
    best = max(gains.values())
    # tie rule: first pair in Tx-major order within the tie tolerance of the best gain
    for i in range(len(F)):
        for j in range(len(W)):
            if gains[i, j] >= best - bf.TIE_RTOL * best:
                return i, j


def test_criterion_1_exhaustive_selection_oracle(report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    mismatches, n = 0, 0
    while n < 500:
        tx, rx = _random_geometry(rng, 16), _random_geometry(rng, 4)
        F, W = _random_codebook(rng, tx, "tx"), _random_codebook(rng, rx, "rx")
        if len(F) * len(W) > 4096:
            continue
        if rng.random() < 0.05:
            H = ChannelMatrix(np.zeros((rx.total, tx.total), complex))
        else:
            H = ChannelMatrix(rng.standard_normal((rx.total, tx.total)) + 1j * rng.standard_normal((rx.total, tx.total)))
        f, w = bf.select_beams_exhaustive(H, F, W)
        got = (F.beams.index(f), W.beams.index(w))
        mismatches += got != _brute_force(H, F, W)
        n += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 60
    report(1, ok, f"{n} instances, {mismatches} mismatches, {elapsed:.1f}s")
    assert ok


# -- 2: matched single-path beamforming gain ----------------------------------


def test_criterion_2_matched_beam_closed_form(report):
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(1000):
        tx, rx = _random_geometry(rng, 64), _random_geometry(rng, 16)
        aod = (rng.uniform(-math.pi, math.pi), rng.uniform(0, math.pi))
        aoa = (rng.uniform(-math.pi, math.pi), rng.uniform(0, math.pi))
        h = complex(rng.standard_normal(), rng.standard_normal()) * 10 ** rng.uniform(-6, 0)
        H = assemble_channel([Path(aod, aoa, 10.0, True)], [PathGain(abs(h) ** 2, h)], tx, rx)
        f = bf.BeamVector(bf.array_response(tx, *aod), aod, "tx")
        w = bf.BeamVector(bf.array_response(rx, *aoa), aoa, "rx")
        expect = tx.total * rx.total * abs(h) ** 2
        worst = max(worst, abs(bf.beamforming_gain(H, f, w) - expect) / expect)
    ok = worst <= 1e-9
    report(2, ok, f"1000 draws, worst relative error {worst:.2e}")
    assert ok


# -- 3: trigger degenerate cases ------------------------------------------------


def test_criterion_3_trigger_degenerate_cases(report):
    details, ok = [], True
    for name in PRESETS:
        cfg, sim = _preset_sim(name)
        same, single, u_diff = True, True, 0
        for t in range(20):
            w = sim.world(cfg.seed, t)
            a = sim.run_tracking(w, 0.0, 0.0)
            b = sim.run_per_grid(w, 0.0)
            same &= bool(np.array_equal(a.per_grid_rate, b.per_grid_rate))
            u_diff += a.U != b.U  # informational: d = 0 between outage grids does not trigger
            single &= sim.run_tracking(w, 7.0, math.inf).U == 1
        ok &= same and single
        details.append(f"{name}: T_D=0 rates bit-exact={same} (U differs in {u_diff}/20), T_D=inf U=1={single}")
    report(3, ok, "; ".join(details))
    assert ok


# -- 4: monotone query cost ---------------------------------------------------


def test_criterion_4_monotone_query_cost(report):
    t0 = time.perf_counter()
    details, ok = [], True
    for name in PRESETS:
        cfg, sim = _preset_sim(name)
        lo, hi = suggest_bracket(sim, cfg.seed)
        grid = np.linspace(lo, hi, 10)
        bad = []
        for seed in range(100):
            w = sim.world(seed, 0)
            U = [sim.run_tracking(w, 0.0, T).U for T in grid]
            if any(b > a for a, b in zip(U, U[1:])):
                bad.append((seed, U))
        ok &= not bad
        details.append(f"{name}: T_D grid [{lo:.3g}, {hi:.3g}], {len(bad)}/100 seeds non-monotone"
                       + (f" (first: seed {bad[0][0]} U={bad[0][1]})" if bad else ""))
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 300
    report(4, ok, "; ".join(details) + f"; {elapsed:.0f}s")
    assert ok


# -- 5: golden section vs grid oracle ---------------------------------------


def test_criterion_5_golden_section_vs_grid(report):
    synth = golden_section_search(lambda t: -(t - 3.0) ** 2, 0.0, 10.0, 1e-6)
    synth_ok = abs(synth.x - 3.0) <= 1e-6

    cfg = harness.packaged_config("narrow")
    scen = build_scenario(truncate_trajectory(harness.scenario_config(cfg), 20))
    sim = Simulator(scen, antenna_preset(cfg.antennas), cfg.settings())
    U_max = round(cfg.U_max * 20 / 50)  # same budget share as 20 of 50 grids
    t0 = time.perf_counter()
    agree = 0
    for rep in range(20):
        res = optimize_threshold(sim, U_max, cfg.delta, trials=50, seed=1000 + rep, grid_points=11)
        agree += res.agrees_with_grid
    elapsed = time.perf_counter() - t0
    ok = synth_ok and agree >= 19 and elapsed < 600
    report(5, ok, f"synthetic optimum {synth.x:.8f} (|err| {abs(synth.x - 3):.1e}); Monte-Carlo agreement "
                  f"{agree}/20 within one cell (M=20, U_max={U_max}, 50 trials/probe, {elapsed:.0f}s)")
    assert ok


# -- 6: localization sampler ------------------------------------------------


def _angular_chi2(e, bins=36):
    ang = np.arctan2(e[:, 1], e[:, 0])
    counts, _ = np.histogram(ang, bins=bins, range=(-math.pi, math.pi))
    return stats.chisquare(counts).pvalue


def test_criterion_6_localization_sampler(report):
    r = 10.0
    m = ErrorModel(r, np.random.default_rng(606))
    e1 = np.array([sample_error(m) for _ in range(100_000)])
    e2 = r * unit_disk_samples(np.random.default_rng(607), 100_000)
    lines, ok = [], True
    for label, e in (("sample_error", e1), ("batch sampler", e2)):
        mean = np.linalg.norm(e, axis=1).mean()
        rel = abs(mean - 2 * r / 3) / (2 * r / 3)
        p = _angular_chi2(e)
        ok &= rel < 0.01 and p > 0.05
        lines.append(f"{label}: mean |e| {mean:.4f} (rel err {rel:.2%}), chi2 p={p:.3f}")
    report(6, ok, "; ".join(lines))
    assert ok


# -- 7: update count grows with the error radius ------------------------------


def test_criterion_7_updates_grow_with_radius(report, presets):
    lines, ok = [], True
    for name in PRESETS:
        cfg, sim, tuned = presets[name]
        means = [evaluate(sim, tuned.T_D, r, cfg.trials, cfg.seed, cfg.U_max).mean_U for r in (0.0, 5.0, 10.0)]
        ok &= means[0] <= means[1] <= means[2]
        lines.append(f"{name}: T_D*={tuned.T_D:.4f}, mean U at r=0/5/10 = "
                     + "/".join(f"{u:.2f}" for u in means) + f" ({cfg.trials} seeds)")
    report(7, ok, "; ".join(lines))
    assert ok


# -- 8: wider beams tolerate more error --------------------------------------


def test_criterion_8_beamwidth_robustness(report, presets):
    r_star, rate0, lines = {}, {}, []
    for name in PRESETS:
        cfg, sim, tuned = presets[name]
        res = max_tolerable_radius(sim, cfg.gamma, cfg.U_max, cfg.delta, cfg.R_th, cfg.trials, cfg.seed)
        r_star[name] = res.r_star
        row0 = next(row for row in res.candidates if row["r"] == 0.0)
        rate0[name] = float(np.mean(row0["estimate"].per_grid_mean_rates))
        first_fail = next((row for row in res.candidates if not row["feasible"]), None)
        lines.append(f"{name}: r*={res.r_star:g} (argmax-of-min {res.argmax_min_rate:g}), "
                     f"mean per-grid rate at r=0 {rate0[name] / 1e9:.3f} Gbps"
                     + (f", first failure r={first_fail['r']:g}: {'; '.join(first_fail['failing'])}"
                        if first_fail else ""))
    ok = r_star["wide"] >= r_star["narrow"] and rate0["narrow"] > rate0["wide"]
    report(8, ok, " | ".join(lines))
    assert ok


# -- 9: channel assembly oracle -----------------------------------------------


def _naive_channel(pairs, hs, tx, rx):
    def resp(g, phi, theta):
        return [cmath.exp(1j * math.pi * (nx * math.sin(theta) * math.sin(phi) + ny * math.cos(phi)))
                / math.sqrt(g.total) for ny in range(g.n_rows) for nx in range(g.n_cols)]

    L = len(pairs)
    H = [[0j] * tx.total for _ in range(rx.total)]
    for (aod, aoa), h in zip(pairs, hs):
        at, ar = resp(tx, *aod), resp(rx, *aoa)
        for i in range(rx.total):
            for j in range(tx.total):
                H[i][j] += math.sqrt(tx.total * rx.total / L) * h * ar[i] * at[j].conjugate()
    return np.array(H)


def test_criterion_9_channel_assembly(report):
    rng = np.random.default_rng(909)
    worst = 0.0
    for _ in range(100):
        tx, rx = _random_geometry(rng, 16), _random_geometry(rng, 4)
        L = int(rng.integers(1, 7))
        pairs = [((rng.uniform(-math.pi, math.pi), rng.uniform(0, math.pi)),
                  (rng.uniform(-math.pi, math.pi), rng.uniform(0, math.pi))) for _ in range(L)]
        hs = rng.standard_normal(L) + 1j * rng.standard_normal(L)
        H = assemble_channel([Path(a, b, 5.0, True) for a, b in pairs], [PathGain(1.0, h) for h in hs], tx, rx)
        worst = max(worst, float(np.abs(H.entries - _naive_channel(pairs, hs, tx, rx)).max()))

    tx, rx = ArrayGeometry(4, 4), ArrayGeometry(2, 2)
    betas = np.array([1.0, 0.3, 0.05])
    pairs = [((0.2, 1.1), (0.4, 1.3)), ((-0.7, 1.6), (0.1, 1.9)), ((1.0, 1.4), (-0.5, 1.2))]
    paths = [Path(a, b, 5.0, True) for a, b in pairs]
    z = (rng.standard_normal((10_000, 3)) + 1j * rng.standard_normal((10_000, 3))) / math.sqrt(2)
    norms = np.array([assemble_channel(paths, [PathGain(b, math.sqrt(b) * zz) for b, zz in zip(betas, row)],
                                       tx, rx).frobenius() ** 2 for row in z])
    expect = tx.total * rx.total * betas.sum() / len(betas)
    se = norms.std(ddof=1) / math.sqrt(len(norms))
    ok = worst <= 1e-12 and abs(norms.mean() - expect) <= 3 * se
    report(9, ok, f"max |H - naive| {worst:.1e}; E||H||^2 {norms.mean():.3f} vs {expect:.3f} "
                  f"({abs(norms.mean() - expect) / se:.2f} sigma)")
    assert ok


# -- 10: link budget arithmetic ------------------------------------------------


def test_criterion_10_snr_arithmetic(report):
    s2_db = 10 * math.log10(bf.sigma2_from_budget(30.0, -174.0, 100e6))
    r_mbps = bf.rate(10.0, 100e6) / 1e6
    ok_s2 = abs(s2_db - 124.0) < 1e-9
    ok_rate = abs(r_mbps - 345.96) <= 0.01
    ok = ok_s2 and ok_rate
    report(10, ok, f"sigma2 {s2_db:.6f} dB ({'ok' if ok_s2 else 'off'}); rate(SNR=10, 100 MHz) "
                   f"{r_mbps:.4f} Mbps vs stated 345.96 +/- 0.01 ({'ok' if ok_rate else 'off'})")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
