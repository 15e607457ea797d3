import json
import subprocess
import sys

import pytest

from sparselqrm.cli import main

from test_experiment import MINIMAL


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(MINIMAL))
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_solve(capsys, config, tmp_path):
    code, out, _ = run(capsys, "solve", "--config", config, "--out", tmp_path / "o")
    assert code == 0
    assert len(json.loads(out)["stages"]) == 1
    assert (tmp_path / "o" / "summary.csv").exists()


def test_sweep_requires_section(capsys, config, tmp_path):
    code, _, err = run(capsys, "sweep", "--config", config, "--out", tmp_path / "o")
    assert code == 2
    assert json.loads(err)["path"] == "sweep"


def test_sweep(capsys, tmp_path):
    cfg = {**MINIMAL, "optimizer": {"method": "subgradient", "max_iterations": 50},
           "sweep": {"gamma0": 0.01, "eta0": 0.01, "stages": 2}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, out, _ = run(capsys, "sweep", "--config", path, "--out", tmp_path / "o")
    assert code == 0
    assert [s["stage"] for s in json.loads(out)["stages"]] == [0, 1]


def test_missing_config(capsys):
    code, _, err = run(capsys, "solve")
    assert code == 2
    assert json.loads(err) == {"error": "ConfigError", "path": "--config", "message": "--config: a config file is required"}


def test_bad_field_reports_path(capsys, tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**MINIMAL, "optimizer": {"stepsize": 1}}))
    code, _, err = run(capsys, "solve", "--config", path)
    assert code == 2
    assert json.loads(err)["path"] == "optimizer.stepsize"


def test_invalid_json(capsys, tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{not json")
    code, _, err = run(capsys, "solve", "--config", path)
    assert code == 2 and "invalid JSON" in json.loads(err)["message"]


def test_runtime_failure_exit_code(capsys, tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**MINIMAL, "system": {"A": [[1.5]], "B": [[1.0]]}}))
    code, _, err = run(capsys, "solve", "--config", path, "--out", tmp_path / "o")
    assert code == 1
    assert "stabilizing" in json.loads(err)["message"]
    assert (tmp_path / "o" / "error.json").exists()


def test_network(capsys, tmp_path):
    code, out, _ = run(capsys, "network", "--nodes", 8, "--noise-level", "high", "--seed", 2, "--out", tmp_path)
    assert code == 0
    info = json.loads(out)
    assert info["n_states"] == 7
    assert info["open_loop_second_moment_radius"] == pytest.approx(1.05, abs=1e-6)
    assert (tmp_path / "system.json").exists() and (tmp_path / "adjacency.json").exists()


def test_demos(capsys, tmp_path):
    code, out, _ = run(capsys, "demo-threshold", "--out", tmp_path)
    assert code == 0 and json.loads(out)["thresholded_stable"] is False
    assert (tmp_path / "threshold_demo.json").exists()
    code, out, _ = run(capsys, "demo-minima")
    assert code == 0 and json.loads(out)["count"] == 2


def test_validate(capsys, config, tmp_path):
    code, out, _ = run(capsys, "validate", "--config", config, "--rollouts", 400, "--horizon", 150)
    assert code == 0
    rep = json.loads(out)
    assert rep["rollouts"] == 400 and rep["horizon"] == 150
    assert rep["within_3_stderr"]
    gain = tmp_path / "gain.json"
    gain.write_text(json.dumps({"K": [[-0.5, -0.1]]}))
    code, out, _ = run(capsys, "validate", "--config", config, "--gain", gain, "--rollouts", 400)
    assert code == 0 and json.loads(out)["analytic_J"] > 0


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sparselqrm", "demo-minima", "--points", "20001"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["count"] == 2
