import json

from disturbsim.cli import main

GEOM = {"banks_per_rank": 4, "subarrays_per_bank": 8, "rows_per_bank": 64,
        "columns_per_row": 16}
TIMINGS = {"t_refw": 640_000_000, "t_refi": 7_812_500}


def write_config(path, mode="none", duration=80_000_000, **mitigation):
    cfg = {
        "dram": {"geometry": GEOM, "timings": TIMINGS},
        "mitigation": {"mode": mode, **mitigation},
        "workload": {"generators": [
            {"kind": "uniform", "rate_ps": 400_000, "count": 200, "thread": 0},
        ]},
        "sim": {"duration": duration, "seed": 5},
    }
    path.write_text(json.dumps(cfg))
    return cfg


def test_run_subcommand(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    write_config(cfg_path)
    out = tmp_path / "out"
    code = main(["run", "--config", str(cfg_path), "--out", str(out),
                 "--verify"])
    assert code == 0
    report = json.loads((out / "stats.json").read_text())
    assert report["requests"]["served"] > 0
    assert (out / "latency.csv").exists()
    printed = json.loads(capsys.readouterr().out)
    assert printed == report


def test_run_bad_config_exit_code(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"sim": {"duration": 100}}))
    assert main(["run", "--config", str(cfg_path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_sweep_subcommand(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("DISTURBSIM_THREADS", "1")
    base = write_config(tmp_path / "unused.json")
    spec = {
        "base": base,
        "sweep": [
            {"name": "p0", "mitigation": {"mode": "para", "n_rh": 64}},
            {"name": "p1", "mitigation": {"mode": "para", "n_rh": 128}},
        ],
    }
    spec_path = tmp_path / "sweep.json"
    spec_path.write_text(json.dumps(spec))
    out = tmp_path / "out"
    out.mkdir()
    code = main(["sweep", "--config", str(spec_path), "--out", str(out),
                 "--verify"])
    assert code == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "name,served,acts,row_hits,violations"
    assert len(lines) == 3
    assert (out / "p0" / "stats.json").exists()


def test_para_solve_subcommand(tmp_path):
    out = tmp_path / "pth.csv"
    code = main(["para-solve", "--n-rh", "1024", "64", "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "n_rh,hc_deadline,p_th,p_rh,k"
    p_1024 = float(lines[1].split(",")[2])
    p_64 = float(lines[2].split(",")[2])
    assert p_64 > p_1024


def test_verify_subcommand(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    write_config(cfg_path, mode="blockhammer", n_rh=64)
    code = main(["verify", "--config", str(cfg_path)])
    verdicts = json.loads(capsys.readouterr().out)
    assert verdicts["feasibility"]["verdict"] == "Infeasible"
    assert verdicts["violations"] == 0
    assert code == 0


def test_svard_gen_subcommand(tmp_path, capsys):
    out = tmp_path / "profile.csv"
    code = main(["svard-gen", "--rows", "64", "--bins", "0.05:512,0.95:1024",
                 "--seed", "3", "--out", str(out)])
    assert code == 0
    header = json.loads(out.read_text().splitlines()[0])
    assert header == {"0": 512, "1": 1024}


def test_gen_attack_subcommand(tmp_path):
    out = tmp_path / "attack.txt"
    code = main(["gen-attack", "--kind", "DoubleSided", "--rows", "10,12",
                 "--count", "50", "--seed", "1", "--out", str(out)])
    assert code == 0
    lines = [l for l in out.read_text().splitlines() if l.strip()]
    assert len(lines) == 50
