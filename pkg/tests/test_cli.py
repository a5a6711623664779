import csv
import json
import subprocess
import sys

import pytest

from ctdls import harness
from ctdls.cli import EXIT_AUDIT, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main


@pytest.fixture
def config(tmp_path):
    def write(**kw):
        data = {"name": "rlc", "T": 2.0, "replications": 1, "out": str(tmp_path / "default_out")}
        data.update(kw)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(data))
        return str(path)

    return write


def test_simulate_writes_all_outputs(config, tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["simulate", "--config", config(), "--seed", "4", "--runs", "2", "--out", str(out)])
    assert code == EXIT_OK
    for name in ("mse.csv", "excitation.csv", "audit.csv", "report.json"):
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["seed"] == 4 and report["config"]["replications"] == 2
    assert "dls" in capsys.readouterr().out


def test_simulate_uses_config_out_dir_and_full_resolution(config, tmp_path):
    assert main(["simulate", "--config", config(T=0.4), "--full-resolution"]) == EXIT_OK
    with open(tmp_path / "default_out" / "mse.csv") as fh:
        n = sum(1 for _ in csv.reader(fh)) - 1
    assert n == 2 * 6 * 401


def test_config_errors_exit_2(config, tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG
    assert main(["simulate", "--config", config(bogus=1)]) == EXIT_CONFIG
    assert main(["audit", "--config", config(edges=[[1, 1]])]) == EXIT_CONFIG
    assert main(["simulate", "--config", config(), "--runs", "0"]) == EXIT_CONFIG
    assert main(["compare", "--config", config(), "--estimators", "dls,kalman", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["frobnicate"]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_numerical_abort_exits_3(config, tmp_path):
    unstable = {"a": [-60.0], "b": [1.0], "inputs": [{"drift": [1.0]}]}
    path = config(name="custom", plant=unstable, T=20.0)
    assert main(["simulate", "--config", path, "--out", str(tmp_path / "o")]) == EXIT_NUMERIC
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["aborted"]


def test_audit_passes_and_fails(config, monkeypatch, capsys):
    assert main(["audit", "--config", config()]) == EXIT_OK
    assert "VIOLATION" not in capsys.readouterr().out
    monkeypatch.setitem(harness.AUDIT_TOLERANCES, "inverse_residual", 0.0)
    assert main(["audit", "--config", config()]) == EXIT_AUDIT
    assert "VIOLATION" in capsys.readouterr().out


def test_compare_table(config, tmp_path, capsys):
    out = tmp_path / "cmp"
    code = main(["compare", "--config", config(), "--estimators", "dls,coop_gradient", "--out", str(out)])
    assert code == EXIT_OK
    text = capsys.readouterr().out
    assert "coop_gradient" in text and "standard_ls" not in text
    with open(out / "mse.csv") as fh:
        assert {row["estimator"] for row in csv.DictReader(fh)} == {"dls", "coop_gradient"}


def test_check_excitation(config, tmp_path, capsys):
    out = tmp_path / "ex"
    assert main(["check-excitation", "--config", config(name="synthetic12", T=4.0), "--out", str(out)]) == EXIT_OK
    with open(out / "excitation.csv") as fh:
        assert len(list(csv.reader(fh))) == 21
    assert "finite-horizon" in capsys.readouterr().out


def test_module_entry_point_exit_code(config):
    proc = subprocess.run([sys.executable, "-m", "ctdls.cli", "audit", "--config", config(bogus=True)],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_CONFIG
