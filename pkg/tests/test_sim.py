import copy
import json

import pytest

from disturbsim.errors import ConfigError
from disturbsim.sim import SimConfig, Simulator, run, violation_count

GEOM = {"banks_per_rank": 4, "subarrays_per_bank": 8, "rows_per_bank": 64,
        "columns_per_row": 16}
TIMINGS = {"t_refw": 640_000_000, "t_refi": 7_812_500}


def base_config(mode="none", duration=160_000_000, seed=42, **mitigation):
    return {
        "dram": {"geometry": dict(GEOM), "timings": dict(TIMINGS)},
        "mitigation": {"mode": mode, **mitigation},
        "workload": {"generators": [
            {"kind": "uniform", "rate_ps": 200_000, "count": 600, "thread": 0},
            {"kind": "DoubleSided", "bank": 0, "rows": [10, 12],
             "rate_ps": 100_000, "count": 1200, "thread": 1},
        ]},
        "sim": {"duration": duration, "seed": seed, "verify": True},
    }


def test_config_validation():
    with pytest.raises(ConfigError):
        SimConfig({"sim": {"duration": 1000}})  # seed missing
    with pytest.raises(ConfigError):
        SimConfig({"sim": {"seed": 1, "duration": 0}})
    cfg = base_config()
    cfg["dram"]["mapping"] = "diagonal"
    with pytest.raises(ConfigError):
        SimConfig(cfg)
    cfg = base_config(mode="quantum")
    with pytest.raises(ConfigError):
        Simulator(SimConfig(cfg))


def test_config_from_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(base_config()))
    assert SimConfig.from_file(path).seed == 42
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        SimConfig.from_file(path)


def test_run_is_deterministic(tmp_path):
    cfg = base_config(mode="para", n_rh=64)
    run(copy.deepcopy(cfg), out_dir=tmp_path / "a")
    run(copy.deepcopy(cfg), out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "stats.json").read_bytes() \
        == (tmp_path / "b" / "stats.json").read_bytes()
    assert (tmp_path / "a" / "latency.csv").read_bytes() \
        == (tmp_path / "b" / "latency.csv").read_bytes()


def test_seed_changes_output():
    a = run(base_config(mode="para", n_rh=64, seed=1))
    b = run(base_config(mode="para", n_rh=64, seed=2))
    assert a != b


def test_stats_conservation_and_clean_timing():
    report = run(base_config())
    req = report["requests"]
    assert req["offered"] == req["served"] + req["in_flight_at_end"] \
        + req["rejected_final"]
    assert report["verify"]["timing_violation_count"] == 0
    assert violation_count(report) == 0
    rb = report["row_buffer"]
    assert rb["hits"] + rb["misses"] + rb["conflicts"] \
        == report["commands"]["reads"] + report["commands"]["writes"]


def test_observe_mode_matches_baseline_commands():
    none_report = run(base_config())
    observe = run(base_config(mode="blockhammer", n_rh=64, observe=True))
    assert observe["commands"] == none_report["commands"]
    assert observe["blockhammer"]["blocked_acts"] == 0


def test_blockhammer_blocks_hammering():
    report = run(base_config(mode="blockhammer", n_rh=64,
                             duration=640_000_000))
    assert report["verify"]["timing_violation_count"] == 0
    assert report["unsafe_skips"] > 0
    # the double-sided thread earns a nonzero likelihood index
    rhli = report["blockhammer"]["rhli"]
    assert any(k.startswith("1:") and v > 0 for k, v in rhli.items())
    n_rh_star = 32
    assert report["verify"]["max_row_window_acts"] <= n_rh_star


def test_para_emits_preventive_refreshes():
    report = run(base_config(mode="para", n_rh=64))
    assert report["preventive_refreshes"] > 0
    assert report["verify"]["timing_violation_count"] == 0


def test_svard_mode_runs_and_relaxes():
    cfg = base_config(mode="svard", profile={"bins": [[0.05, 64], [0.95, 128]]})
    svard_report = run(cfg)
    plain_report = run(base_config(mode="para", n_rh=64))
    assert svard_report["verify"]["timing_violation_count"] == 0
    assert svard_report["preventive_refreshes"] \
        < plain_report["preventive_refreshes"]


def test_hira_mode_short_run_clean():
    cfg = base_config(mode="hira", t_refslack_rc_multiples=4,
                      spt={"coverage": 0.32},
                      preventive={"enabled": True, "n_rh": 64})
    report = run(cfg)
    v = report["verify"]
    assert v["timing_violation_count"] == 0
    assert v["refresh_deadline_violations"] == 0
    assert report["hira"]["hira_refresh_access"] \
        + report["hira"]["hira_refresh_refresh"] > 0
    assert violation_count(report) == 0
