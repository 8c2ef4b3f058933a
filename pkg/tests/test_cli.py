import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from powerpost.cli import main
from powerpost.model import make_process, sample_data, save_dataset


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_check_lemmas_exit_zero(capsys, tmp_path):
    code, out, _ = run(["check-lemmas", "--instances", "20", "--seed", "1", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert len(out.strip().splitlines()) == 5
    saved = json.loads((tmp_path / "lemma_checks.json").read_text())
    assert saved["instances"] == 20
    assert sum(saved["violations"].values()) == 0


def test_missing_config_exit_one(capsys, tmp_path):
    code, _, err = run(["sweep", "--config", str(tmp_path / "nope.yaml")], capsys)
    assert code == 1
    assert "configuration error" in err


def test_unknown_model_exit_one(capsys):
    code, _, _ = run(["diagnose", "--model", "poisson", "--n", "50", "--alpha", "1"], capsys)
    assert code == 1


def test_diagnose_conjugate_cell(capsys, tmp_path):
    out_file = tmp_path / "cell.json"
    code, out, _ = run(["diagnose", "--process", "gaussian", "--n", "1000", "--alpha", "1", "--seed", "1",
                        "--out", str(out_file)], capsys)
    assert code == 0
    payload = json.loads(out)
    assert payload == json.loads(out_file.read_text())
    assert [r["k"] for r in payload["reports"]] == [1, 2]
    assert all(r["tv"] < 0.05 for r in payload["reports"])


def test_fit_from_data_file(capsys, tmp_path):
    x = sample_data(make_process("laplace"), 101, 4)
    path = tmp_path / "x.txt"
    save_dataset(path, x)
    code, out, _ = run(["fit", "--data", str(path), "--model", "laplace_location", "--alpha", "0.5"], capsys)
    assert code == 0
    payload = json.loads(out)
    assert payload["n"] == 101
    assert payload["theta_mle"][0] == pytest.approx(np.median(x), abs=1e-6)


def test_fit_numerical_error_exit_two(capsys, tmp_path):
    path = tmp_path / "sep.txt"
    save_dataset(path, np.array([[-2.0, 0.0], [-1.0, 0.0], [1.0, 1.0], [2.0, 1.0]]))
    code, _, err = run(["fit", "--data", str(path), "--model", "logistic_regression"], capsys)
    assert code == 2
    assert "numerical error" in err


def test_sweep_writes_outputs_and_flags_failures(capsys, tmp_path):
    cfg = {"model": "gaussian_location", "process": "laplace", "n_sequence": [50, 100],
           "alpha_set": [1.0], "seeds": [0, 1]}
    good = tmp_path / "good.yaml"
    good.write_text(yaml.safe_dump(cfg))
    code, out, _ = run(["sweep", "--config", str(good), "--out", str(tmp_path / "res")], capsys)
    assert code == 0
    assert "4/4 cells ok" in out
    for name in ("diagnostics.csv", "theorem2.csv", "summary.json", "failures.json"):
        assert (tmp_path / "res" / name).exists()

    cfg["prior"] = {"name": "normal", "loc": 100.0, "scale": 0.1}
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump(cfg))
    code, _, err = run(["sweep", "--config", str(bad), "--out", str(tmp_path / "bad")], capsys)
    assert code == 2
    assert "failed fraction" in err


def test_property_violation_exit_three(capsys, monkeypatch):
    from powerpost import harness

    class Report:
        total_violations = 1

        def lines(self):
            return ["lemma1: 1/1 violations"]

    monkeypatch.setattr(harness, "check_lemmas", lambda n, seed: Report())
    code, out, _ = run(["check-lemmas", "--instances", "1"], capsys)
    assert code == 3
    assert "violations" in out


def test_console_module_runs():
    proc = subprocess.run([sys.executable, "-m", "powerpost.cli", "check-lemmas", "--instances", "5"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
