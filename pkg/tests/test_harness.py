import csv
import json

import pytest

from skeltrack import harness
from skeltrack.errors import ConfigError


def small(**kw):
    base = dict(seed=3, antennas="narrow", r=[0.0, 8.0], T_D=0.9, trials=4, relative_distance=True)
    base.update(kw)
    return harness.config_from_dict(base)


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("bad, field", [
    ({"trials": 0}, "trials"),
    ({"R_th": -1.0}, "R_th"),
    ({"antennas": "huge"}, "antennas"),
    ({"controller": "oracle"}, "controller"),
    ({"controller": "fixed-distance", "fixed_distance": 0.0}, "fixed_distance"),
    ({"T_D": None}, "T_D"),
    ({"gamma": [4.0, 2.0]}, "gamma"),
    ({"r": [-1.0]}, "r"),
    ({"pilot_model": "phase"}, "pilot_model"),
    ({"colour": "red"}, "colour"),
])
def test_config_errors(bad, field):
    with pytest.raises(ConfigError) as exc:
        small(**bad)
    assert exc.value.field == field


def test_seed_is_required():
    with pytest.raises(ConfigError) as exc:
        harness.config_from_dict({"T_D": 1.0})
    assert exc.value.field == "seed"


def test_zero_trials_writes_nothing(tmp_path):
    cfg = small()
    cfg.trials = 0
    out = tmp_path / "out"
    with pytest.raises(ConfigError):
        harness.run(cfg, out)
    assert not out.exists()


def test_yaml_loading(tmp_path):
    p = tmp_path / "exp.yaml"
    p.write_text("seed: 1\nT_D: 0.5\nr: 4\nR_th: '2e8'\n")
    cfg = harness.load_config(p)
    assert cfg.r == [4] and cfg.R_th == 2e8
    with pytest.raises(ConfigError):
        harness.load_config(tmp_path / "missing.yaml")
    (tmp_path / "bad.yaml").write_text("seed: [1\n")
    with pytest.raises(ConfigError):
        harness.load_config(tmp_path / "bad.yaml")


@pytest.mark.parametrize("name, radii, budget", [("narrow", [0, 10, 11, 12], 20), ("wide", [0, 19, 20, 21], 15)])
def test_packaged_presets(name, radii, budget):
    cfg = harness.packaged_config(name)
    assert cfg.antennas == name and cfg.r == radii and cfg.U_max == budget
    assert cfg.R_th == 200e6 and cfg.tune


def test_run_outputs(tmp_path):
    cfg = small(R_th=0.7e9)
    b = harness.run(cfg, tmp_path)
    per = rows(tmp_path / "rates_per_grid.csv")
    assert list(per[0]) == ["grid_index", "r", "mean_rate", "stderr"]
    assert len(per) == 2 * 50
    # Gbps in files, bit/s in memory
    first = [r for r in per if float(r["r"]) == 0.0]
    mean0 = sum(res.per_grid_rate[0] for res in b.results[0.0]) / cfg.trials
    assert float(first[0]["mean_rate"]) == pytest.approx(mean0 / 1e9)
    flags = {(float(r["r"]), int(r["grid_index"])) for r in rows(tmp_path / "rate_floor_flags.csv")}
    below = {(float(r["r"]), int(r["grid_index"])) for r in per if float(r["mean_rate"]) < 0.7}
    assert flags == below
    upd = rows(tmp_path / "updates_table.csv")
    assert [float(r["r"]) for r in upd] == [0.0, 8.0]
    assert float(upd[0]["mean_U"]) == pytest.approx(sum(r.U for r in b.results[0.0]) / cfg.trials)
    dist = rows(tmp_path / "rate_distribution.csv")
    assert float(dist[-1]["cdf"]) == 1.0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config"]["seed"] == 3 and man["seeds"]["trials"] == [0, 1, 2, 3]
    assert man["code_version"] and "rates_per_grid.csv" in man["files"]
    assert not (tmp_path / "optimizer_trace.jsonl").exists()


def test_manifest_reproduces_a_row(tmp_path):
    harness.run(small(), tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    per = rows(tmp_path / "rates_per_grid.csv")
    row = per[50 + 17]
    mean, se = harness.reproduce_row(man, float(row["r"]), int(row["grid_index"]))
    assert repr(mean) == row["mean_rate"] and repr(se) == row["stderr"]


def test_tuned_run_shares_one_threshold(tmp_path):
    cfg = small(T_D=None, tune=True, bracket=[0.0, 2.0], tol=0.1, trials=3)
    b = harness.run(cfg, tmp_path)
    assert b.thresholds[0.0] == b.thresholds[8.0]
    trace = (tmp_path / "optimizer_trace.jsonl").read_text().splitlines()
    assert trace and all(json.loads(t)["tuned_for_r"] == 0.0 for t in trace)


def test_retuned_run_tunes_each_radius(tmp_path):
    cfg = small(T_D=None, tune=True, retune=True, bracket=[0.0, 2.0], tol=0.2, trials=3)
    harness.run(cfg, tmp_path)
    tuned = {json.loads(t)["tuned_for_r"] for t in (tmp_path / "optimizer_trace.jsonl").read_text().splitlines()}
    assert tuned == {0.0, 8.0}


def test_benchmarks():
    cfg = small(controller="per-grid", T_D=None)
    sim = harness.make_simulator(cfg)
    assert all(r.U == 50 for r in harness.benchmark_per_grid(cfg, sim))
    assert all(r.U == 22 for r in harness.benchmark_fixed_distance(cfg, 7.0, sim))
    assert all(r.U == 1 for r in harness.benchmark_fixed_distance(cfg, float("inf"), sim))
    with pytest.raises(ConfigError):
        harness.benchmark_fixed_distance(cfg, -1.0, sim)


def test_tracking_at_zero_threshold_matches_benchmark():
    cfg = small(T_D=0.0, r=[0.0])
    sim = harness.make_simulator(cfg)
    tr = harness._trials(sim, cfg, "skeleton-tracking", 0.0, 0.0)
    pg = harness.benchmark_per_grid(cfg, sim)
    assert all((a.per_grid_rate == b.per_grid_rate).all() for a, b in zip(tr, pg))


def test_external_scenario_file(tmp_path, default_config):
    import yaml

    (tmp_path / "map.yaml").write_text(yaml.safe_dump(default_config))
    (tmp_path / "exp.yaml").write_text("seed: 1\nT_D: 0.9\ntrials: 1\nscenario: map.yaml\n")
    cfg = harness.load_config(tmp_path / "exp.yaml")
    assert harness.scenario_config(cfg)["name"] == default_config["name"]
