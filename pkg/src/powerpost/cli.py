"""Command-line entry point: ``powerpost {fit,diagnose,sweep,check-lemmas}``.

Exit codes: 0 success, 1 configuration error, 2 numerical error,
3 property violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .asymptotics import estimate_curvature, fit_mle
from .errors import ConfigError, DomainError, NumericalError, PropertyViolation
from .model import check_compatible, load_dataset, make_model, make_prior, make_process, sample_data
from .posterior import AlphaConfig, grid_covariance, grid_mean, normalize_on_grid

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_PROPERTY = 0, 1, 2, 3

log = logging.getLogger("powerpost")


def _emit(payload: dict, out) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")
    print(text)


def _cell_config(args) -> harness.ExperimentConfig:
    if args.config:
        cfg = harness.load_config(args.config)
    else:
        cfg = harness.config_from_mapping({"model": args.model, "process": args.process,
                                           "prior": args.prior, "seeds": [args.seed or 0]})
    n = args.n if args.n is not None else cfg.n_sequence[0]
    alpha = args.alpha if args.alpha is not None else cfg.alpha_set[0]
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    cfg = replace(cfg, n_sequence=(n,), alpha_set=(alpha,), seeds=(seed,))
    return cfg


def cmd_fit(args) -> int:
    model = make_model(args.model)
    prior = make_prior(args.prior, model.dim_p)
    if args.data:
        data = load_dataset(args.data, model.obs_shape)
        source = str(args.data)
    else:
        process = make_process(args.process)
        check_compatible(process, model)
        data = sample_data(process, args.n, args.seed or 0)
        source = f"{process.name} n={args.n} seed={args.seed or 0}"
    fit = fit_mle(model, data, allow_plateau=True)
    curv = estimate_curvature(model, data, fit.theta_hat)
    post = normalize_on_grid(model, prior, data, AlphaConfig(args.alpha), center=fit.theta_hat, V=curv.V)
    _emit({
        "data": source, "n": int(len(data)), "model": model.name, "prior": prior.name, "alpha": args.alpha,
        "theta_mle": fit.theta_hat.tolist(), "mle_method": fit.method,
        "V": curv.V.tolist(), "M": curv.M.tolist(), "V_tilde": curv.V_tilde.tolist(),
        "posterior_mean": grid_mean(post).tolist(), "posterior_covariance": grid_covariance(post).tolist(),
    }, args.out)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = harness.resolve_theta_star(_cell_config(args))
    n, alpha, seed = cfg.cells()[0]
    res = harness.run_cell(cfg, n, alpha, seed)
    row = res.theorem2
    _emit({
        "reports": [{k: (float(v) if isinstance(v, (float, np.floating)) else v)
                     for k, v in rep.as_row().items()} for rep in res.reports],
        "theorem2": {"n": row.n, "alpha": row.alpha, "seed": row.seed,
                     "theta_bayes": row.theta_bayes.tolist(), "theta_mle": row.theta_mle.tolist(),
                     "gap": row.gap.tolist(), "scaled_error": row.scaled_error.tolist()},
    }, args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not args.config:
        raise ConfigError("sweep needs --config")
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seeds=tuple(s + args.seed for s in cfg.seeds))
    out = args.out or cfg.output_path
    result = harness.run_sweep(cfg, out, threads=args.threads)
    cells = result.summary["cells"]
    print(f"{cells['total'] - cells['failed']}/{cells['total']} cells ok; results in {out}")
    if not result.ok:
        print(f"failed fraction {cells['failed_fraction']:.3f} exceeds {harness.FAILURE_LIMIT}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_check_lemmas(args) -> int:
    report = harness.check_lemmas(args.instances, args.seed or 0)
    for line in report.lines():
        print(line)
    if args.out:
        path = Path(args.out)
        path.mkdir(parents=True, exist_ok=True)
        (path / "lemma_checks.json").write_text(json.dumps(
            {"instances": report.instances, "violations": report.violations, "examples": report.examples},
            indent=2, sort_keys=True) + "\n")
    return EXIT_PROPERTY if report.total_violations else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="powerpost", description="Power-posterior quadrature and diagnostics.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="YAML experiment file")
        p.add_argument("--out", help="output path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)

    def cell(p):
        p.add_argument("--model", default="gaussian_location")
        p.add_argument("--process", default="gaussian")
        p.add_argument("--prior", default="normal")
        p.add_argument("--n", type=int, default=None)
        p.add_argument("--alpha", type=float, default=None)

    p = sub.add_parser("fit", help="MLE and posterior summary for one dataset")
    common(p, config=False)
    p.add_argument("--data", help="one observation per line; otherwise data are simulated")
    p.add_argument("--model", default="gaussian_location")
    p.add_argument("--process", default="gaussian")
    p.add_argument("--prior", default="normal")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--alpha", type=float, default=1.0)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("diagnose", help="all diagnostics for one (n, alpha, seed) cell")
    common(p)
    cell(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("sweep", help="run every cell of a configuration")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check-lemmas", help="random-instance checks of the bounds")
    common(p, config=False)
    p.add_argument("--instances", type=int, default=100)
    p.set_defaults(func=cmd_check_lemmas)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PropertyViolation as exc:
        print(f"property violation: {exc}", file=sys.stderr)
        return EXIT_PROPERTY
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, DomainError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
