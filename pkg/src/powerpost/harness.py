"""Experiment runner: sweeps over ``(n, alpha, seed)`` cells.

A cell runs the whole pipeline: sample data, fit the MLE, estimate the
curvature, tabulate the alpha-posterior, move it to local coordinates,
tabulate the limiting Gaussian there and evaluate every diagnostic, plus the
posterior-mean statistics.  Output files are sorted by cell key and floats are
written with ``repr`` so reruns (serial or parallel) are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .asymptotics import estimate_curvature, fit_mle, limiting_gaussian
from .diagnostics import (DiagnosticsConfig, DiagnosticsReport, concentration_tail_mass,
                          fn_ratio_suprema, lan_grid, lan_remainder, lemma1_bound_check,
                          lemma2_tail_bound, markov_tail_bound, tv_distance, weighted_l1_distance)
from .errors import ConfigError, PowerPostError, PropertyViolation
from .model import (check_compatible, make_model, make_prior, make_process,
                    pseudo_true_parameter, sample_data)
from .posterior import (AlphaConfig, GridDensity, grid_mean, normalize_on_grid, tabulate,
                        tabulate_gaussian, to_lan_frame)

log = logging.getLogger(__name__)

THREADS_ENV = "POWERPOST_THREADS"
FAILURE_LIMIT = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    """A sweep over sample sizes, tempering powers and seeds for one model/process/prior."""

    model: str
    process: str
    prior: str = "normal"
    model_params: dict = field(default_factory=dict)
    process_params: dict = field(default_factory=dict)
    prior_params: dict = field(default_factory=dict)
    n_sequence: tuple = (50, 200, 800, 3200)
    alpha_set: tuple = (0.25, 0.5, 1.0)
    seeds: tuple = tuple(range(50))
    k_values: tuple = (1, 2)
    diagnostics: DiagnosticsConfig = DiagnosticsConfig()
    grid_halfwidth_se: float = 12.0
    nodes_per_dim: Optional[int] = None
    theta_star: Optional[tuple] = None
    output_path: str = "results"

    def __post_init__(self):
        ns = tuple(int(n) for n in self.n_sequence)
        if not ns or any(n < 1 for n in ns) or any(b <= a for a, b in zip(ns, ns[1:])):
            raise ConfigError(f"n_sequence must be strictly increasing positive integers, got {list(ns)}")
        alphas = tuple(float(a) for a in self.alpha_set)
        if not alphas or any(not a > 0 for a in alphas):
            raise ConfigError(f"alpha_set must contain positive values, got {list(alphas)}")
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ConfigError("at least one seed is required")
        ks = tuple(int(k) for k in self.k_values)
        for k in ks:
            replace(self.diagnostics, k=k)  # validates 1 <= k <= k0
        object.__setattr__(self, "n_sequence", ns)
        object.__setattr__(self, "alpha_set", alphas)
        object.__setattr__(self, "seeds", seeds)
        object.__setattr__(self, "k_values", ks)
        if self.theta_star is not None:
            object.__setattr__(self, "theta_star", tuple(float(t) for t in np.ravel(self.theta_star)))

    def cells(self) -> list:
        return [(n, a, s) for n in self.n_sequence for a in self.alpha_set for s in self.seeds]

    def key(self) -> str:
        raw = asdict(self)
        raw.pop("output_path")
        return json.dumps(raw, sort_keys=True, default=str)


@dataclass(frozen=True, eq=False)
class Theorem2Row:
    n: int
    alpha: float
    seed: int
    theta_bayes: np.ndarray
    theta_mle: np.ndarray
    gap: np.ndarray
    scaled_error: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.gap)):
            raise PropertyViolation(f"non-finite posterior-mean gap in cell n={self.n} seed={self.seed}")


@dataclass(frozen=True, eq=False)
class CellResult:
    reports: tuple
    theorem2: Theorem2Row
    v_tilde_hat: np.ndarray


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

_TOP_KEYS = {"model", "process", "prior", "n_sequence", "alpha_set", "seeds", "diagnostics",
             "grid", "theta_star", "output_path"}


def _named(entry, what: str) -> tuple:
    if isinstance(entry, str):
        return entry, {}
    if isinstance(entry, dict) and "name" in entry:
        params = {k: v for k, v in entry.items() if k != "name"}
        return str(entry["name"]), params
    raise ConfigError(f"{what} must be a name or a mapping with a 'name' key, got {entry!r}")


def config_from_mapping(raw: dict) -> ExperimentConfig:
    """Validate a parsed configuration mapping and build an :class:`ExperimentConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    for required in ("model", "process"):
        if required not in raw:
            raise ConfigError(f"configuration is missing {required!r}")
    model, model_params = _named(raw["model"], "model")
    process, process_params = _named(raw["process"], "process")
    prior, prior_params = _named(raw.get("prior", "normal"), "prior")
    seeds = raw.get("seeds", {"start": 0, "stop": 50})
    if isinstance(seeds, dict):
        try:
            seeds = range(int(seeds.get("start", 0)), int(seeds["stop"]))
        except KeyError:
            raise ConfigError("seeds mapping needs a 'stop' key") from None
    elif isinstance(seeds, int):
        seeds = [seeds]
    diag = dict(raw.get("diagnostics") or {})
    ks = diag.pop("k", [1, 2])
    ks = [ks] if isinstance(ks, int) else list(ks)
    try:
        dcfg = DiagnosticsConfig(k=min(ks) if ks else 1, **diag)
    except TypeError as exc:
        raise ConfigError(f"bad diagnostics settings: {exc}") from None
    grid = dict(raw.get("grid") or {})
    unknown_grid = set(grid) - {"halfwidth_se", "nodes_per_dim"}
    if unknown_grid:
        raise ConfigError(f"unknown grid settings: {sorted(unknown_grid)}")
    try:
        cfg = ExperimentConfig(
            model=model, process=process, prior=prior,
            model_params=model_params, process_params=process_params, prior_params=prior_params,
            n_sequence=tuple(raw.get("n_sequence", (50, 200, 800, 3200))),
            alpha_set=tuple(raw.get("alpha_set", (0.25, 0.5, 1.0))),
            seeds=tuple(seeds), k_values=tuple(ks), diagnostics=dcfg,
            grid_halfwidth_se=float(grid.get("halfwidth_se", 12.0)),
            nodes_per_dim=grid.get("nodes_per_dim"),
            theta_star=raw.get("theta_star"),
            output_path=str(raw.get("output_path", "results")),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    build_context(cfg)  # resolve names before any computation
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read a YAML (or JSON) experiment file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse configuration {path}: {exc}") from None
    return config_from_mapping(raw)


@dataclass(frozen=True, eq=False)
class _Context:
    model: object
    process: object
    prior: object
    theta_star: np.ndarray
    reference_sandwich: Optional[np.ndarray]


@lru_cache(maxsize=32)
def _context_for(key: str) -> _Context:
    raw = json.loads(key)
    model = make_model(raw["model"], **raw["model_params"])
    process = make_process(raw["process"], **raw["process_params"])
    prior = make_prior(raw["prior"], model.dim_p, **raw["prior_params"])
    check_compatible(process, model)
    if raw["theta_star"] is not None:
        theta_star = np.asarray(raw["theta_star"], dtype=float).reshape(model.dim_p)
    elif process.has_known_pseudo_true:
        theta_star = np.asarray(process.pseudo_true, dtype=float).reshape(model.dim_p)
    else:
        theta_star = pseudo_true_parameter(process, model)
    if not model.inside(theta_star, strict=True):
        raise ConfigError(f"theta_star {theta_star.tolist()} is not interior to the parameter box")
    ref = process.reference_sandwich.get(model.name)
    return _Context(model, process, prior, theta_star, None if ref is None else np.asarray(ref, float))


def build_context(cfg: ExperimentConfig) -> _Context:
    return _context_for(cfg.key())


def resolve_theta_star(cfg: ExperimentConfig) -> ExperimentConfig:
    """Return ``cfg`` with the pseudo-true parameter filled in."""
    if cfg.theta_star is not None:
        return cfg
    return replace(cfg, theta_star=tuple(build_context(cfg).theta_star.tolist()))


# ---------------------------------------------------------------------------
# Cells
# ---------------------------------------------------------------------------


def run_cell(cfg: ExperimentConfig, n: int, alpha: float, seed: int) -> CellResult:
    """Evaluate one ``(n, alpha, seed)`` cell; one report per configured moment order."""
    ctx = build_context(cfg)
    model, prior, theta_star = ctx.model, ctx.prior, ctx.theta_star
    data = sample_data(ctx.process, n, seed)
    fit = fit_mle(model, data, theta_star=theta_star, allow_plateau=True)
    curv_hat = estimate_curvature(model, data, fit.theta_hat)
    curv_star = estimate_curvature(model, data, theta_star)
    acfg = AlphaConfig(alpha, cfg.grid_halfwidth_se, cfg.nodes_per_dim)
    post = normalize_on_grid(model, prior, data, acfg, center=fit.theta_hat, V=curv_hat.V)
    lan = to_lan_frame(post, theta_star, n)
    phi = limiting_gaussian(fit, curv_star, alpha, n, "h", theta_star).tabulate(lan.axes)

    dcfg = cfg.diagnostics
    r = dcfg.radius(n)
    tv = tv_distance(lan, phi)
    tail = concentration_tail_mass(lan, r)
    sup = fn_ratio_suprema(lan, phi, r)
    if sup.reduced:
        log.info("cell n=%s alpha=%s seed=%s: ratio suprema from log-ratio extremes (%d nodes)",
                 n, alpha, seed, sup.nodes)
    k_grid = lan_grid(dcfg.lan_radius, dcfg.lan_nodes, model.dim_p)
    sup_rn = lan_remainder(model, data, theta_star, curv_star.V, k_grid, fit.theta_hat)

    reports = []
    for k in cfg.k_values:
        z0, z_upper = weighted_l1_distance(lan, phi, k)
        reports.append(DiagnosticsReport(
            model=model.name, process=ctx.process.name, prior=prior.name, n=int(n), alpha=float(alpha),
            seed=int(seed), k=int(k), r=float(r), z0=z0, z_upper=z_upper, tv=tv, sup_Rn=sup_rn,
            tail_mass=tail, sup_fn_plus=sup.sup_plus, sup_fn_minus=sup.sup_minus))
    theta_bayes = grid_mean(post)
    root = math.sqrt(n)
    row = Theorem2Row(int(n), float(alpha), int(seed), theta_bayes, fit.theta_hat,
                      root * (theta_bayes - fit.theta_hat), root * (theta_bayes - theta_star))
    return CellResult(tuple(reports), row, curv_hat.V_tilde)


def _cell_task(args):
    cfg, (n, alpha, seed) = args
    try:
        return "ok", (n, alpha, seed), run_cell(cfg, n, alpha, seed)
    except PowerPostError as exc:
        return "fail", (n, alpha, seed), f"{type(exc).__name__}: {exc}"
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return "fail", (n, alpha, seed), f"{type(exc).__name__}: {exc}"


def thread_cap(requested: Optional[int] = None) -> int:
    threads = requested if requested else 1
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            threads = min(threads, max(1, int(env)))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return max(1, threads)


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def diagnostics_csv(reports) -> str:
    cols = DiagnosticsReport.columns()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for rep in sorted(reports, key=lambda r: (r.n, r.alpha, r.seed, r.k)):
        row = rep.as_row()
        w.writerow([_fmt(row[c]) for c in cols])
    return buf.getvalue()


def theorem2_csv(rows, names: tuple) -> str:
    rows = sorted(rows, key=lambda r: (r.n, r.alpha, r.seed))
    p = len(rows[0].theta_bayes) if rows else 1
    vec_cols = [f"{name}_{j}" for name in ("theta_bayes", "theta_mle", "gap", "scaled_error") for j in range(p)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "process", "prior", "n", "alpha", "seed", *vec_cols])
    for r in rows:
        vals = [*r.theta_bayes, *r.theta_mle, *r.gap, *r.scaled_error]
        w.writerow([*names, r.n, _fmt(r.alpha), r.seed, *[_fmt(v) for v in vals]])
    return buf.getvalue()


def non_increasing(values, atol: float = 1e-9) -> bool:
    """True when every entry is at most the previous one plus ``atol`` (a numerical-noise floor)."""
    return all(b <= a + atol for a, b in zip(values, values[1:]))


def _median(xs) -> float:
    return float(np.median(np.asarray(xs, dtype=float)))


def summarize(cfg: ExperimentConfig, results: dict, failures: dict, reference: Optional[np.ndarray]) -> dict:
    """Per-(n, alpha) medians, scaled-error covariance and monotonicity flags."""
    groups = []
    series: dict = {}
    for alpha in cfg.alpha_set:
        for n in cfg.n_sequence:
            cells = [results[(n, alpha, s)] for s in cfg.seeds if (n, alpha, s) in results]
            entry = {"n": n, "alpha": alpha, "cells": len(cells),
                     "failed": sum(1 for s in cfg.seeds if (n, alpha, s) in failures)}
            if cells:
                med = {}
                for k_idx, k in enumerate(cfg.k_values):
                    med[f"z0_k{k}"] = _median([c.reports[k_idx].z0 for c in cells])
                    med[f"z_upper_k{k}"] = _median([c.reports[k_idx].z_upper for c in cells])
                first = [c.reports[0] for c in cells]
                for name in ("tv", "sup_Rn", "tail_mass", "sup_fn_plus", "sup_fn_minus"):
                    med[name] = _median([getattr(r, name) for r in first])
                med["gap_norm"] = _median([np.linalg.norm(c.theorem2.gap) for c in cells])
                errors = np.array([c.theorem2.scaled_error for c in cells])
                cov = np.atleast_2d(np.cov(errors.T, ddof=1)) if len(cells) > 1 else None
                v_hat = np.median(np.array([c.v_tilde_hat for c in cells]), axis=0)
                ref = reference if reference is not None else v_hat
                entry.update({
                    "median": med,
                    "scaled_error_mean": errors.mean(axis=0).tolist(),
                    "scaled_error_cov": None if cov is None else cov.tolist(),
                    "sandwich_reference": np.asarray(ref).tolist(),
                    "sandwich_reference_kind": "analytic" if reference is not None else "estimated_median",
                    "sandwich_ratio": None if cov is None else (np.diag(cov) / np.diag(ref)).tolist(),
                })
                for name, value in med.items():
                    series.setdefault(alpha, {}).setdefault(name, []).append(value)
            groups.append(entry)
    monotone = {repr(a): {name: non_increasing(vals) for name, vals in sorted(d.items())}
                for a, d in series.items()}
    total = len(cfg.cells())
    return {
        "model": cfg.model, "process": cfg.process, "prior": cfg.prior,
        "theta_star": list(cfg.theta_star) if cfg.theta_star is not None else None,
        "cells": {"total": total, "failed": len(failures), "failed_fraction": len(failures) / total},
        "groups": groups,
        "non_increasing_in_n": monotone,
    }


@dataclass(frozen=True, eq=False)
class SweepResult:
    results: dict
    failures: dict
    summary: dict
    files: dict

    @property
    def failed_fraction(self) -> float:
        return self.summary["cells"]["failed_fraction"]

    @property
    def ok(self) -> bool:
        return self.failed_fraction <= FAILURE_LIMIT


def run_sweep(cfg: ExperimentConfig, out_dir=None, threads: Optional[int] = None) -> SweepResult:
    """Run every cell, write ``diagnostics.csv``, ``theorem2.csv``, ``summary.json`` and ``failures.json``.

    Failed cells are logged and skipped; :attr:`SweepResult.ok` turns false
    when more than 5% of the cells fail.
    """
    cfg = resolve_theta_star(cfg)
    ctx = build_context(cfg)
    tasks = [(cfg, cell) for cell in cfg.cells()]
    workers = thread_cap(threads)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_cell_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        outcomes = [_cell_task(t) for t in tasks]
    results, failures = {}, {}
    for status, cell, payload in outcomes:
        if status == "ok":
            results[cell] = payload
        else:
            failures[cell] = payload
            log.warning("cell n=%s alpha=%s seed=%s failed: %s", *cell, payload)
    summary = summarize(cfg, results, failures, ctx.reference_sandwich)
    reports = [rep for res in results.values() for rep in res.reports]
    names = (ctx.model.name, ctx.process.name, ctx.prior.name)
    texts = {
        "diagnostics.csv": diagnostics_csv(reports),
        "theorem2.csv": theorem2_csv([res.theorem2 for res in results.values()], names),
        "summary.json": json.dumps(summary, indent=2, sort_keys=True) + "\n",
        "failures.json": json.dumps([{"n": c[0], "alpha": c[1], "seed": c[2], "reason": failures[c]}
                                     for c in sorted(failures)], indent=2) + "\n",
    }
    files = {}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in texts.items():
            (out / name).write_text(text)
            files[name] = out / name
    return SweepResult(results, failures, summary, files)


# ---------------------------------------------------------------------------
# Random-instance inequality sweeps
# ---------------------------------------------------------------------------

_AXIS_1D = np.linspace(-12.0, 12.0, 801)
_AXIS_2D = np.linspace(-8.0, 8.0, 81)
_AXIS_WIDE = np.linspace(-40.0, 40.0, 8001)
_AXIS_HEAVY = 5.0 * np.sinh(np.linspace(-math.asinh(80.0), math.asinh(80.0), 4001))


def _random_gaussian(rng, p: int, axes) -> GridDensity:
    mean = rng.uniform(-1.5, 1.5, size=p)
    if p == 1:
        cov = np.array([[rng.uniform(0.3, 2.0) ** 2]])
    else:
        a = rng.normal(size=(p, p))
        cov = a @ a.T / p + 0.3 * np.eye(p)
    return tabulate_gaussian(axes, mean, cov, frame="h", theta_star=np.zeros(p), n=1)


def _random_mixture(rng, p: int, axes) -> GridDensity:
    comps = [_random_gaussian(rng, p, axes) for _ in range(2)]
    w = rng.uniform(0.2, 1.0, size=2)
    w = w / w.sum()
    lv = np.logaddexp(np.log(w[0]) + comps[0].log_values, np.log(w[1]) + comps[1].log_values)
    return GridDensity(tuple(axes), lv, "h", np.zeros(p), 1)


def _student_t_grid(df: float = 5.0, scale: float = 1.0) -> GridDensity:
    from scipy import stats
    return tabulate((_AXIS_HEAVY * scale,), lambda pts: stats.t.logpdf(pts[:, 0], df, scale=scale),
                    "h", np.zeros(1), 1)


@dataclass
class LemmaSweepReport:
    instances: int
    violations: dict
    examples: dict

    @property
    def total_violations(self) -> int:
        return sum(self.violations.values())

    def lines(self) -> list:
        return [f"{name}: {count}/{self.instances} violations" for name, count in self.violations.items()]


def check_lemmas(instances: int = 100, seed: int = 0) -> LemmaSweepReport:
    """Random-instance checks of the ratio/moment bound, the tail-moment bound,
    the Markov tail bound, ``z0 <= z_upper`` and the ``f-``/``f+`` symmetry.

    Tail-moment instances draw ``r`` from ``[1, 6]``; below ``r = 1`` the
    bound is not guaranteed for ``k > 1``.
    """
    rng = np.random.default_rng(seed)
    names = ("lemma1", "lemma2", "markov", "z0_le_z", "fn_symmetry")
    violations = {name: 0 for name in names}
    examples: dict = {name: [] for name in names}
    heavy = _student_t_grid()

    def record(name, ok, detail):
        if not ok:
            violations[name] += 1
            if len(examples[name]) < 5:
                examples[name].append(detail)

    for i in range(instances):
        p = 1 if i % 2 == 0 else 2
        axes = (_AXIS_1D,) if p == 1 else (_AXIS_2D, _AXIS_2D)
        a = _random_gaussian(rng, p, axes)
        b = _random_gaussian(rng, p, axes)

        k = int(rng.integers(1, 4))
        radius = float(rng.uniform(0.5, 4.0))
        chk = lemma1_bound_check(a, b, k, radius)
        record("lemma1", chk.holds, {"instance": i, "k": k, "K": radius, "lhs": chk.lhs, "rhs": chk.rhs})

        k2 = int(rng.integers(1, 3))
        r = float(rng.uniform(1.0, 6.0))
        if i % 4 == 3:
            gamma = float(rng.uniform(0.1, 3.0 / k2 - 1.0 if k2 == 1 else 0.5))
            chk2 = lemma2_tail_bound(heavy, k2, gamma, r)
        else:
            gamma = float(rng.uniform(0.1, 2.0))
            wide = tabulate_gaussian((_AXIS_WIDE,), rng.uniform(-1.0, 1.0, size=1),
                                     [[rng.uniform(0.3, 2.0) ** 2]], "h", np.zeros(1), 1)
            chk2 = lemma2_tail_bound(wide, k2, gamma, r)
        record("lemma2", chk2.holds, {"instance": i, "k": k2, "gamma": gamma, "r": r,
                                      "lhs": chk2.lhs, "rhs": chk2.rhs})

        mix = _random_mixture(rng, p, axes)
        k0 = int(rng.choice([1, 2, 4]))
        r_m = float(rng.uniform(0.2, 5.0))
        tail = concentration_tail_mass(mix, r_m)
        bound = markov_tail_bound(mix, r_m, k0)
        record("markov", tail <= bound * (1 + 1e-12) + 1e-15,
               {"instance": i, "r": r_m, "k0": k0, "tail": tail, "bound": bound})

        for kz in (1, 2):
            z0, zu = weighted_l1_distance(a, b, kz)
            record("z0_le_z", z0 <= zu * (1 + 1e-12) + 1e-15, {"instance": i, "k": kz, "z0": z0, "z": zu})

        try:
            fn_ratio_suprema(a, b, float(rng.uniform(0.5, 4.0)))
            ok = True
        except PropertyViolation as exc:
            ok = False
            detail = str(exc)
        record("fn_symmetry", ok, {"instance": i} if ok else {"instance": i, "error": detail})
    return LemmaSweepReport(instances, violations, examples)
