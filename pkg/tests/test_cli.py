import json
import subprocess
import sys

import pytest

from dbflow.cli import main


def test_verify_exit_zero(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("check,passed,detail\n")
    assert ",false," not in out


def test_run_verify_exit_zero(capsys):
    assert main(["run", "--experiment", "verify"]) == 0


def test_run_e1_csv(capsys):
    assert main(["run", "--experiment", "e1", "--n", "8", "--set", "steps=100"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "seed,sigma2_a,sigma2_b,max_diff,mean_diff,steps"
    assert len(lines) == 4
    assert all(float(l.split(",")[3]) <= 1e-10 for l in lines[1:])


def test_run_e14_json_to_file(tmp_path):
    out = tmp_path / "e14.json"
    rc = main(["run", "--experiment", "e14", "--n", "6", "--seeds", "1", "--sigma2", "0,10",
               "--format", "json", "--out", str(out), "--set", 'methods=["cayley"]'])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["columns"][0] == "method"
    assert [r[0] for r in doc["rows"]] == ["cayley", "cayley"]
    assert doc["rows"][0][4] == doc["rows"][1][4]
    assert doc["metadata"]["config"]["sigma2"] == [0.0, 10.0]


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": "e12", "seeds": 3, "overrides": {"steps": 50}}))
    assert main(["run", "--experiment", "e12", "--config", str(cfg), "--seeds", "1"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2


def test_runs_are_byte_identical(tmp_path):
    paths = [tmp_path / f"{i}.csv" for i in range(2)]
    for p in paths:
        assert main(["run", "--experiment", "e12", "--seeds", "2", "--out", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


@pytest.mark.parametrize("argv", [
    [],
    ["run"],
    ["run", "--experiment", "e99"],
    ["run", "--experiment", "e1", "--sigma2", "a,b"],
    ["run", "--experiment", "e1", "--set", "steps"],
    ["run", "--experiment", "e1", "--config", "/nonexistent.json"],
    ["solve", "--config", "/nonexistent.json"],
])
def test_usage_errors_exit_one(argv, capsys):
    assert main(argv) == 1


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"colour": "red"}))
    assert main(["run", "--experiment", "e1", "--config", str(cfg)]) == 1


def test_experiment_failure_exits_two(capsys):
    rc = main(["run", "--experiment", "e4", "--seeds", "1", "--set", "variant=B", "--set", "steps=10"])
    assert rc == 2
    assert "variant B" in capsys.readouterr().err


def test_unwritable_output_exits_two(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", "--experiment", "e12", "--seeds", "1", "--out", str(blocker / "x.csv")]) == 2


def test_solve_prints_summary_and_log(tmp_path, capsys):
    cfg = tmp_path / "solve.json"
    cfg.write_text(json.dumps({
        "n": 6, "eigenvalues": [6, 5, 4, 3, 2, 1], "basis_seed": 3,
        "sigma_schedule": {"kind": "constant", "sigma2": 100.0},
        "eps_E": 0.0,
        "seed": 1,
        "solver": {"retraction": "cayley", "step": {"kind": "constant", "c": 0.1}, "max_iters": 5000},
    }))
    log = tmp_path / "log.csv"
    assert main(["solve", "--config", str(cfg), "--out", str(log)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["converged"] and summary["method"] == "dbf-cayley"
    assert summary["mvp_count"] == 6 * summary["iters"]
    assert log.read_text().startswith("k,f,delta")


def test_solve_rejects_bad_config(tmp_path):
    cfg = tmp_path / "solve.json"
    cfg.write_text(json.dumps({"eigenvalues": [1, 2]}))
    assert main(["solve", "--config", str(cfg)]) == 1
    cfg.write_text(json.dumps({"eigenvalues": [2, 1], "init": "random-walk"}))
    assert main(["solve", "--config", str(cfg)]) == 1


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dbflow.cli", "run", "--experiment", "nope"],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert "invalid choice" in proc.stderr
