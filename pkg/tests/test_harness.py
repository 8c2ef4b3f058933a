import json

import numpy as np
import pytest
import yaml

from powerpost import harness
from powerpost.diagnostics import DiagnosticsConfig
from powerpost.errors import ConfigError
from powerpost.harness import (ExperimentConfig, check_lemmas, config_from_mapping, load_config,
                               non_increasing, run_cell, run_sweep, thread_cap)
from powerpost.model import make_model, make_prior, make_process, sample_data
from powerpost.posterior import AlphaConfig, grid_covariance, normalize_on_grid


def small(**over):
    base = dict(model="gaussian_location", process="laplace", n_sequence=(50, 200), alpha_set=(0.5, 1.0),
                seeds=(0, 1, 2))
    base.update(over)
    return ExperimentConfig(**base)


def test_config_validation():
    with pytest.raises(ConfigError):
        small(seeds=())
    with pytest.raises(ConfigError):
        small(n_sequence=(200, 50))
    with pytest.raises(ConfigError):
        small(n_sequence=(50, 50))
    with pytest.raises(ConfigError):
        small(alpha_set=(0.5, -1.0))
    with pytest.raises(ConfigError):
        small(k_values=(3,))


def test_mapping_errors_come_before_computation():
    with pytest.raises(ConfigError, match="unknown model"):
        config_from_mapping({"model": "poisson", "process": "gaussian"})
    with pytest.raises(ConfigError):
        config_from_mapping({"model": "gaussian_location", "process": "gaussian", "bogus": 1})
    with pytest.raises(ConfigError):
        config_from_mapping({"model": "gaussian_location", "process": "gaussian",
                             "seeds": {"start": 5, "stop": 5}})
    with pytest.raises(ConfigError):
        config_from_mapping({"model": "gaussian_location", "process": "logistic"})


def test_load_yaml(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump({
        "model": "gaussian_location",
        "process": {"name": "student_t", "df": 5, "loc": 0.5},
        "prior": {"name": "normal", "scale": 5.0},
        "n_sequence": [10, 20], "alpha_set": [1.0], "seeds": {"start": 3, "stop": 6},
        "diagnostics": {"k": [1, 2], "gamma": 0.5}, "grid": {"halfwidth_se": 10},
    }))
    cfg = load_config(path)
    assert cfg.seeds == (3, 4, 5)
    assert cfg.k_values == (1, 2)
    assert cfg.diagnostics.gamma == 0.5
    assert cfg.process_params == {"df": 5, "loc": 0.5}
    assert cfg.grid_halfwidth_se == 10.0
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_conjugate_cell_matches_closed_form():
    cfg = small(process="gaussian", n_sequence=(100,), alpha_set=(1.0,), seeds=(1,))
    res = run_cell(cfg, 100, 1.0, 1)
    x = sample_data(make_process("gaussian"), 100, 1)
    tau = 10.0
    mean = x.sum() / (100 + 1 / tau ** 2)
    assert res.theorem2.theta_bayes[0] == pytest.approx(mean, abs=1e-6)
    assert res.theorem2.gap[0] == pytest.approx(10 * (mean - x.mean()), abs=1e-5)
    assert [r.k for r in res.reports] == [1, 2]


def test_cell_rerun_is_byte_identical():
    cfg = small()
    a = harness.diagnostics_csv(run_cell(cfg, 200, 0.5, 2).reports)
    b = harness.diagnostics_csv(run_cell(cfg, 200, 0.5, 2).reports)
    assert a == b


def test_sweep_outputs_and_determinism(tmp_path, monkeypatch):
    cfg = small()
    one = run_sweep(cfg, tmp_path / "serial", threads=1)
    monkeypatch.setenv(harness.THREADS_ENV, "2")
    two = run_sweep(cfg, tmp_path / "parallel", threads=4)
    for name in ("diagnostics.csv", "theorem2.csv", "summary.json", "failures.json"):
        assert (tmp_path / "serial" / name).read_bytes() == (tmp_path / "parallel" / name).read_bytes()
    rows = (tmp_path / "serial" / "diagnostics.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 2 * 3 * 2
    summary = json.loads((tmp_path / "serial" / "summary.json").read_text())
    assert summary["cells"] == {"total": 12, "failed": 0, "failed_fraction": 0.0}
    group = summary["groups"][0]
    assert group["sandwich_reference"] == [[2.0]]
    assert group["sandwich_reference_kind"] == "analytic"
    assert len(group["scaled_error_cov"]) == 1
    assert one.ok and two.ok


def test_sweep_failure_policy(tmp_path):
    cfg = small(prior="normal", prior_params={"loc": 100.0, "scale": 0.1}, seeds=(0,))
    res = run_sweep(cfg, tmp_path)
    assert not res.ok
    assert res.failed_fraction == 1.0
    failures = json.loads((tmp_path / "failures.json").read_text())
    assert all("GridTooNarrowError" in f["reason"] for f in failures)


def test_estimated_sandwich_reference_for_unknown_processes():
    cfg = small(process="student_t", process_params={"df": 5}, n_sequence=(200,), alpha_set=(1.0,),
                seeds=(0, 1, 2, 3))
    group = run_sweep(cfg).summary["groups"][0]
    assert group["sandwich_reference_kind"] == "analytic"
    cfg = small(model="logistic_regression", process="logistic", n_sequence=(200,), alpha_set=(1.0,),
                seeds=(0, 1, 2))
    group = run_sweep(cfg).summary["groups"][0]
    assert group["sandwich_reference_kind"] == "estimated_median"


def test_thread_cap(monkeypatch):
    monkeypatch.delenv(harness.THREADS_ENV, raising=False)
    assert thread_cap(None) == 1
    assert thread_cap(8) == 8
    monkeypatch.setenv(harness.THREADS_ENV, "3")
    assert thread_cap(8) == 3
    monkeypatch.setenv(harness.THREADS_ENV, "x")
    with pytest.raises(ConfigError):
        thread_cap(2)


def test_non_increasing_tolerance():
    assert non_increasing([3.0, 2.0, 2.0, 1.0])
    assert non_increasing([1e-13, 5e-13, 2e-12])
    assert not non_increasing([0.1, 0.2])


def test_check_lemmas_has_no_violations():
    report = check_lemmas(40, seed=3)
    assert report.total_violations == 0
    assert len(report.lines()) == 5


@pytest.mark.slow
@pytest.mark.parametrize("process", ["gaussian", "laplace"])
def test_diagnostics_non_increasing_in_n(process):
    cfg = small(process=process, n_sequence=(50, 200, 800, 3200), alpha_set=(0.5, 1.0),
                seeds=tuple(range(20)), k_values=(1, 2))
    flags = run_sweep(cfg).summary["non_increasing_in_n"]
    for alpha in ("0.5", "1.0"):
        for name in ("z0_k1", "z0_k2", "tv", "sup_Rn", "tail_mass"):
            assert flags[alpha][name], (alpha, name)


@pytest.mark.slow
@pytest.mark.parametrize("model,process,alphas", [
    ("gaussian_location", "gaussian", (0.25, 0.5, 1.0)),
    ("gaussian_location", "laplace", (0.25, 0.5, 1.0)),
    ("gaussian_location", "student_t", (0.25, 0.5, 1.0)),
    ("gaussian_location_2d", "laplace_2d", (0.25, 0.5, 1.0)),
    ("logistic_regression", "logistic", (0.5, 1.0)),
])
def test_posterior_mean_gap_shrinks(model, process, alphas):
    cfg = small(model=model, process=process, n_sequence=(200, 800, 3200), alpha_set=alphas,
                seeds=tuple(range(20)), k_values=(1,))
    summary = run_sweep(cfg).summary
    for alpha, flags in summary["non_increasing_in_n"].items():
        assert flags["gap_norm"], alpha
    for g in summary["groups"]:
        if g["n"] == 3200:
            assert g["median"]["gap_norm"] < 0.1, g["alpha"]


@pytest.mark.slow
def test_logistic_gap_scales_like_one_over_alpha():
    # the O(1/(alpha n)) skew term keeps alpha = 0.25 above 0.1 at n = 3200
    cfg = small(model="logistic_regression", process="logistic", n_sequence=(3200,), alpha_set=(0.25, 1.0),
                seeds=tuple(range(20)), k_values=(1,))
    med = {g["alpha"]: g["median"]["gap_norm"] for g in run_sweep(cfg).summary["groups"]}
    assert med[0.25] / med[1.0] == pytest.approx(4.0, rel=0.15)


@pytest.mark.slow
def test_alpha_does_not_change_limit_of_posterior_mean():
    cfg = small(n_sequence=(2000,), alpha_set=(0.25, 1.0), seeds=tuple(range(200)), k_values=(1,))
    res = run_sweep(cfg)
    errs = {a: np.array([r.theorem2.scaled_error[0] for (n, al, s), r in res.results.items() if al == a])
            for a in (0.25, 1.0)}
    se = np.sqrt(errs[0.25].var(ddof=1) / 200 + errs[1.0].var(ddof=1) / 200)
    assert abs(errs[0.25].mean() - errs[1.0].mean()) < 2 * se
    ratio = errs[0.25].var(ddof=1) / errs[1.0].var(ddof=1)
    assert 0.8 <= ratio <= 1.25


def test_posterior_variance_scales_inversely_with_alpha():
    m = make_model("gaussian_location")
    tau = 10.0
    prior = make_prior("normal", 1, scale=tau)
    x = sample_data(make_process("laplace"), 2000, 7)
    var = {a: grid_covariance(normalize_on_grid(m, prior, x, AlphaConfig(a)))[0, 0] for a in (0.5, 1.0)}
    # subtract the prior precision, then the data precision is alpha n
    data_prec = {a: 1 / v - 1 / tau ** 2 for a, v in var.items()}
    assert data_prec[1.0] / data_prec[0.5] == pytest.approx(2.0, rel=0.05)
    assert data_prec[1.0] == pytest.approx(2000.0, rel=1e-6)


def test_diagnostics_config_carried_into_cells():
    cfg = small(diagnostics=DiagnosticsConfig(r=2.5), n_sequence=(50,), alpha_set=(1.0,), seeds=(0,))
    res = run_cell(cfg, 50, 1.0, 0)
    assert all(r.r == 2.5 for r in res.reports)
