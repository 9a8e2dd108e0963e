"""Command-line interface: ``pqla simulate | estimate | study | diagnose``.

Exit codes: 0 success, 2 configuration or usage error, 3 simulation or data
error, 4 estimation did not converge (the result file is still written),
5 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import chi0_tail, laq_remainder_comparison, moment_estimate, pldi_tail_estimate
from .config import CliConfig, load_config
from .errors import ConfigurationError, DataError, DomainError, EvaluationError, PqlaError, SimulationError
from .experiments import derive_seed, run_records, run_study, simulate_replication
from .optimizer import penalized_qmle, qbe, qmle
from .penalties import verify_conditions
from .quasi_likelihood import QuasiLikelihood, chi0_estimate
from .sde_core import load_dataset, save_dataset, simulate_dataset, validate_dataset
from .svg import line_chart

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NONCONVERGED, EXIT_INTERNAL = 0, 2, 3, 4, 5
ESTIMATE_SCHEMA = "pqla-estimate/1"
DIAGNOSE_SCHEMA = "pqla-diagnose/1"
CHECKS = ("pldi", "laq", "moments", "chi0", "conditions")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _dump(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=True, default=_jsonable) + "\n"


def _out_dir(args, cfg: CliConfig) -> Path:
    out = Path(args.out_dir) if getattr(args, "out_dir", None) else cfg.out_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"output directory {out} is not writable: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise ConfigurationError(f"output directory {out} is not writable")
    return out


def _log(cfg: CliConfig, msg: str) -> None:
    if cfg.verbosity > 0:
        print(msg, file=sys.stderr)


def _workers(args, cfg: CliConfig):
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigurationError("--workers must be positive")
        return cfg.experiment.with_(workers=args.workers)
    return cfg.experiment


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    exp = cfg.experiment
    n = args.n or cfg.n
    seed = exp.master_seed if args.seed is None else args.seed
    ds, _ = simulate_dataset(exp.model, exp.theta_star, n, exp.kappa, seed)
    ds.provenance["master_seed"] = seed
    out = Path(args.out)
    try:
        save_dataset(ds, out)
    except OSError as exc:
        raise ConfigurationError(f"cannot write {out}: {exc.strerror}") from None
    _log(cfg, f"wrote {n + 1} observations to {out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = load_config(args.config)
    exp = cfg.experiment
    ds = load_dataset(args.dataset)
    validate_dataset(ds, exp.model.p)
    if ds.d != exp.model.d:
        raise DataError(f"dataset has {ds.d} covariates, the model needs {exp.model.d}")
    objective = QuasiLikelihood(ds, exp.model)
    seed = int(ds.provenance.get("master_seed", ds.provenance.get("seed", exp.master_seed)))
    if args.method == "qmle":
        result = qmle(objective, None, exp.newton)
    elif args.method == "pql":
        start = qmle(objective, None, exp.newton)
        result = penalized_qmle(objective, exp.penalty, start.theta_hat, exp.rates, exp.newton)
    else:
        result = qbe(objective, None, replace(exp.mcmc, seed=seed))
    body = result.to_dict()
    body.pop("wall_time")
    doc = {"schema_version": ESTIMATE_SCHEMA, "master_seed": seed, "dataset": str(args.dataset),
           "n": ds.n, "result": body}
    out = Path(args.out)
    try:
        out.write_text(_dump(doc))
    except OSError as exc:
        raise ConfigurationError(f"cannot write {out}: {exc.strerror}") from None
    _log(cfg, f"{args.method}: theta_hat = {np.array2string(result.theta_hat, precision=4)}")
    if not result.converged:
        print(f"estimation did not converge: {result.message}", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _study_svg(report) -> str:
    cfg = report.config
    series = {}
    for method in cfg.estimators:
        if method == "qmle":
            continue
        for kind in ("true", "under", "over"):
            series[f"{method}: {kind} model"] = [
                report.totals[(method, n)][kind]["rate"] if (method, n) in report.totals else None
                for n in cfg.n_grid]
    if not series:
        series = {"qmle: true model": [report.totals[("qmle", n)]["true"]["rate"]
                                       if ("qmle", n) in report.totals else None for n in cfg.n_grid]}
    return line_chart(cfg.n_grid, series, f"Selection probability (seed {cfg.master_seed})")


def cmd_study(args) -> int:
    cfg = load_config(args.config)
    exp = _workers(args, cfg)
    out = _out_dir(args, cfg)

    def progress(done, total):
        if cfg.verbosity > 1 or (cfg.verbosity > 0 and done == total):
            print(f"\r{done}/{total} replications", end="\n" if done == total else "", file=sys.stderr)

    report = run_study(exp, progress)
    writers = {"csv": report.to_csv, "json": lambda: report.to_json() + "\n", "svg": lambda: _study_svg(report)}
    for fmt in cfg.formats:
        (out / f"study.{fmt}").write_text(writers[fmt]())
    _log(cfg, f"wrote {', '.join(f'study.{f}' for f in cfg.formats)} to {out}")
    return EXIT_OK


def _diagnose(check: str, cfg: CliConfig, exp) -> tuple[dict, dict[str, str]]:
    dcfg = cfg.diagnostics
    theta_star = np.asarray(exp.theta_star, dtype=float)
    extra: dict[str, str] = {}
    if check == "conditions":
        report = verify_conditions(exp.penalty, exp.rates, exp.n_grid, exp.support, theta_star)
        return report.to_dict(), extra
    if check == "pldi":
        curve = pldi_tail_estimate(exp, dcfg.r_grid, dcfg.eps, dcfg.reps, True, dcfg.n,
                                   dcfg.starts, dcfg.probes)
        extra["csv"] = f"# schema_version={DIAGNOSE_SCHEMA} master_seed={exp.master_seed}\n" + curve.to_csv()
        body = curve.to_dict()
        body["n"] = dcfg.n or exp.n_grid[0]
        body["polynomial_deviation"] = curve.polynomial_deviation().tolist()
        return body, extra
    if check == "laq":
        comp = laq_remainder_comparison(exp, dcfg.n_small, dcfg.n_large, dcfg.reps, dcfg.probes)
        return comp.to_dict(), extra
    if check == "moments":
        sub = exp.with_(replications=dcfg.reps, estimators=("penalized",))
        values = {}
        for n in (dcfg.n_small, dcfg.n_large):
            recs = [r for r in run_records(sub, (n,)) if r.ok("penalized")]
            if not recs:
                raise PqlaError(f"every penalized fit failed at n={n}")
            values[n] = moment_estimate([r.estimates["penalized"] for r in recs], theta_star, n,
                                        dcfg.moment_order, exp.rates)
        ratio = values[dcfg.n_large] / values[dcfg.n_small] if values[dcfg.n_small] > 0 else None
        return {"order": dcfg.moment_order, "reps": dcfg.reps,
                "moments": {str(k): v for k, v in values.items()}, "ratio": ratio}, extra
    n = dcfg.n or exp.n_grid[0]
    vals = []
    for i in range(dcfg.reps):
        _, paths = simulate_replication(exp, n, i)
        vals.append(chi0_estimate(paths, exp.model, theta_star, dcfg.chi0_budget,
                                  seed=derive_seed(exp.master_seed, n, i)))
    return {"n": n, "values": vals, "r": list(dcfg.r_grid), "tail": chi0_tail(vals, dcfg.r_grid)}, extra


def cmd_diagnose(args) -> int:
    cfg = load_config(args.config)
    exp = _workers(args, cfg)
    out = _out_dir(args, cfg)
    body, extra = _diagnose(args.check, cfg, exp)
    doc = {"schema_version": DIAGNOSE_SCHEMA, "master_seed": exp.master_seed, "check": args.check,
           "config": exp.to_dict(), "result": body}
    (out / f"diagnose_{args.check}.json").write_text(_dump(doc))
    for suffix, text in extra.items():
        (out / f"diagnose_{args.check}.{suffix}").write_text(text)
    if args.check == "conditions":
        for name, res in body["conditions"].items():
            _log(cfg, f"[{name}] {'pass' if res['passed'] else 'FAIL'}  {res['note']}")
    _log(cfg, f"wrote diagnose_{args.check}.json to {out}")
    return EXIT_OK


def _default_workers():
    raw = os.environ.get("PQLA_WORKERS")
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(f"PQLA_WORKERS must be an integer, got {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pqla", description="Penalized quasi-likelihood analysis of SDE volatility.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one dataset")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None, help="simulation seed (default: master_seed)")
    p.add_argument("--n", type=int, default=None, help="number of increments (default: [experiment] n)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate theta from a dataset file")
    p.add_argument("dataset")
    p.add_argument("config")
    p.add_argument("--method", choices=("qmle", "pql", "qbe"), default="qmle")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    for name, func, helptext in (("study", cmd_study, "run a Monte Carlo study"),
                                 ("diagnose", cmd_diagnose, "run an asymptotic diagnostic")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config")
        p.add_argument("--out-dir", default=None)
        p.add_argument("--workers", type=int, default=None, help="worker processes (default: $PQLA_WORKERS)")
        if name == "diagnose":
            p.add_argument("--check", choices=CHECKS, required=True)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if getattr(args, "workers", "absent") is None:
            args.workers = _default_workers()
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, DataError, DomainError, EvaluationError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PqlaError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED if args.command == "estimate" else EXIT_INTERNAL
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
