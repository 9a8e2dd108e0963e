"""Seeded Monte Carlo studies of the volatility regression experiment."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .errors import ConfigurationError, PqlaError, StudyError
from .optimizer import McmcOptions, NewtonOptions, penalized_qmle, qbe, qmle
from .penalties import PenaltySpec, SupportPartition
from .quasi_likelihood import QuasiLikelihood, RateSpec
from .sde_core import DEFAULT_KAPPA, Dataset, ModelSpec, PathBundle, simulate_observation, simulate_paths

SCHEMA_VERSION = "pqla-study/1"
ESTIMATORS = ("qmle", "penalized", "qbe")
DEFAULT_THETA = (0.0, 1.0, 0.0, 1.0, 2.0, 0.0, 1.0, 1.0, 1.0, 0.0)


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec = field(default_factory=ModelSpec.sin_exp)
    theta_star: tuple[float, ...] = DEFAULT_THETA
    n_grid: tuple[int, ...] = (1000, 2000, 3000, 10000)
    replications: int = 300
    penalty: PenaltySpec = field(default_factory=PenaltySpec)
    rates: RateSpec = field(default_factory=RateSpec)
    master_seed: int = 20240601
    estimators: tuple[str, ...] = ("qmle", "penalized")
    kappa: int = DEFAULT_KAPPA
    workers: int = 1
    newton: NewtonOptions = field(default_factory=NewtonOptions)
    mcmc: McmcOptions = field(default_factory=McmcOptions)

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigurationError("replications must be at least 1")
        if len(self.theta_star) != self.model.p:
            raise ConfigurationError(f"theta_star needs {self.model.p} entries")
        if not self.model.in_closed_box(self.theta_star):
            raise ConfigurationError("theta_star outside the parameter box")
        if not self.n_grid or any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ConfigurationError("n_grid must be non-empty and increasing")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown or not self.estimators:
            raise ConfigurationError(f"unknown estimators {sorted(unknown)}")
        if self.kappa < 1 or self.workers < 1:
            raise ConfigurationError("kappa and workers must be positive")

    @property
    def support(self) -> SupportPartition:
        return SupportPartition.from_theta(self.theta_star)

    def with_(self, **changes) -> ExperimentConfig:
        return replace(self, **changes)

    def reduced(self, p: int) -> ExperimentConfig:
        """The same experiment restricted to the first ``p`` covariates and parameters."""
        bound = self.model.theta_box[0][1]
        return replace(self, model=ModelSpec.sin_exp(p, bound=bound), theta_star=self.theta_star[:p])

    def to_dict(self) -> dict:
        pen = self.penalty
        return {
            "model": self.model.to_dict(),
            "theta_star": list(self.theta_star),
            "n_grid": list(self.n_grid),
            "replications": self.replications,
            "penalty": {"kind": pen.kind, "q": pen.q, "q_prime": pen.q_prime,
                        "weights_rule": pen.weights_rule, "lambda": pen.lambda_,
                        "c0": pen.c0, "clamp": pen.clamp},
            "rates": {"exponent": self.rates.exponent, "scale": self.rates.scale},
            "master_seed": self.master_seed,
            "estimators": list(self.estimators),
            "kappa": self.kappa,
            "tau": self.newton.tau,
        }


def derive_seed(master_seed: int, n: int, index: int) -> int:
    """64-bit seed that depends only on ``(master_seed, n, index)``."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(int(n), int(index)))
    return int(ss.generate_state(1, np.uint64)[0])


def simulate_replication(cfg: ExperimentConfig, n: int, index: int) -> tuple[Dataset, PathBundle]:
    paths = simulate_paths(cfg.model, n, cfg.kappa, derive_seed(cfg.master_seed, n, index))
    return simulate_observation(cfg.model, cfg.theta_star, paths), paths


def classify_selection(theta_hat, truth: SupportPartition) -> str:
    """``exact``, ``under``, ``over`` or ``mixed`` by comparing zero sets.

    Under means the estimated zero set contains J0, over means it is contained
    in J0; a selection that is both is reported as ``exact``.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    if theta_hat.shape != truth.zero_mask.shape:
        raise ConfigurationError("dimension mismatch between estimate and support")
    zeros = theta_hat == 0.0
    under = bool(np.all(zeros[truth.zero_mask]))
    over = not bool(np.any(zeros[truth.nonzero_mask]))
    if under and over:
        return "exact"
    if under:
        return "under"
    if over:
        return "over"
    return "mixed"


@dataclass
class ReplicationRecord:
    n: int
    index: int
    seed: int
    estimates: dict[str, list[float] | None]
    converged: dict[str, bool]
    selection: dict[str, str | None]
    errors: dict[str, str]
    wall_time: float = 0.0

    def ok(self, method: str) -> bool:
        return self.estimates.get(method) is not None and self.converged.get(method, False)

    def to_dict(self) -> dict:
        return {"n": self.n, "index": self.index, "seed": self.seed, "estimates": self.estimates,
                "converged": self.converged, "selection": self.selection, "errors": self.errors}


def run_replication(cfg: ExperimentConfig, n: int, index: int) -> ReplicationRecord:
    if not 0 <= index < cfg.replications:
        raise ConfigurationError(f"replication index {index} out of range")
    start = time.perf_counter()
    seed = derive_seed(cfg.master_seed, n, index)
    estimates: dict[str, list[float] | None] = {}
    converged: dict[str, bool] = {}
    selection: dict[str, str | None] = {}
    errors: dict[str, str] = {}
    truth = cfg.support
    try:
        ds, _ = simulate_replication(cfg, n, index)
        objective = QuasiLikelihood(ds, cfg.model)
    except PqlaError as exc:
        for method in cfg.estimators:
            estimates[method], converged[method], selection[method] = None, False, None
            errors[method] = f"{type(exc).__name__}: {exc}"
        return ReplicationRecord(n, index, seed, estimates, converged, selection, errors,
                                 time.perf_counter() - start)

    base = None
    for method in cfg.estimators:
        try:
            if method in ("qmle", "penalized") and base is None:
                base = qmle(objective, None, cfg.newton)
            if method == "qmle":
                result = base
            elif method == "penalized":
                result = penalized_qmle(objective, cfg.penalty, base.theta_hat, cfg.rates, cfg.newton)
            else:
                start_point = None if base is None else base.theta_hat
                result = qbe(objective, start_point, replace(cfg.mcmc, seed=seed))
        except PqlaError as exc:
            estimates[method], converged[method], selection[method] = None, False, None
            errors[method] = f"{type(exc).__name__}: {exc}"
            continue
        estimates[method] = [float(v) for v in result.theta_hat]
        converged[method] = bool(result.converged)
        selection[method] = classify_selection(result.theta_hat, truth)
    return ReplicationRecord(n, index, seed, estimates, converged, selection, errors,
                             time.perf_counter() - start)


def _run_task(args):
    cfg, n, index = args
    return run_replication(cfg, n, index)


def run_records(cfg: ExperimentConfig, n_values: Iterable[int] | None = None,
                progress: Callable[[int, int], None] | None = None) -> list[ReplicationRecord]:
    """Run every replication for every ``n``; records come back sorted by ``(n, index)``."""
    n_values = cfg.n_grid if n_values is None else tuple(n_values)
    tasks = [(cfg, n, i) for n in n_values for i in range(cfg.replications)]
    records = []
    if cfg.workers == 1:
        for k, task in enumerate(tasks):
            records.append(_run_task(task))
            if progress:
                progress(k + 1, len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for k, rec in enumerate(pool.map(_run_task, tasks, chunksize=8)):
                records.append(rec)
                if progress:
                    progress(k + 1, len(tasks))
    records.sort(key=lambda r: (r.n, r.index))
    return records


# --------------------------------------------------------------------------
# aggregation
# --------------------------------------------------------------------------


def _binomial(successes: int, total: int) -> dict:
    p = successes / total
    return {"rate": p, "mc_stderr": math.sqrt(p * (1 - p) / total)}


@dataclass
class StudyReport:
    config: ExperimentConfig
    records: list[ReplicationRecord]
    cells: dict = field(default_factory=dict)
    totals: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    runtime: float = 0.0

    @classmethod
    def aggregate(cls, cfg: ExperimentConfig, records: list[ReplicationRecord], runtime: float = 0.0):
        report = cls(cfg, records, runtime=runtime)
        truth = cfg.support
        for n in cfg.n_grid:
            recs = [r for r in records if r.n == n]
            for method in cfg.estimators:
                good = [r for r in recs if r.ok(method)]
                report.failures[(method, n)] = 1.0 - len(good) / len(recs) if recs else 1.0
                if not good:
                    continue
                est = np.array([r.estimates[method] for r in good])
                for j in range(cfg.model.p):
                    col = est[:, j]
                    zero_prob = float(np.mean(col == 0.0))
                    report.cells[(method, n, j)] = {
                        "mean": float(np.mean(col)),
                        "sd": float(np.std(col, ddof=1)) if len(col) > 1 else None,
                        "zero_prob": zero_prob,
                        "prob": zero_prob if truth.zero_mask[j] else 1.0 - zero_prob,
                        "count": len(col),
                    }
                classes = [r.selection[method] for r in good]
                N = len(classes)
                under = sum(c in ("under", "exact") for c in classes)
                over = sum(c in ("over", "exact") for c in classes)
                exact = sum(c == "exact" for c in classes)
                report.totals[(method, n)] = {
                    "under": _binomial(under, N),
                    "over": _binomial(over, N),
                    "true": _binomial(exact, N),
                    "count": N,
                }
        for n in cfg.n_grid:
            if all((m, n) not in report.totals for m in cfg.estimators):
                raise StudyError(f"all replications failed for n={n}")
        return report

    def cell(self, method: str, n: int, j: int) -> dict:
        return self.cells[(method, n, j)]

    def rate(self, method: str, n: int, kind: str) -> float:
        return self.totals[(method, n)][kind]["rate"]

    def to_csv(self) -> str:
        cfg = self.config
        buf = io.StringIO()
        buf.write(f"# schema_version={SCHEMA_VERSION} master_seed={cfg.master_seed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "true", "estimator", "statistic"] + [str(n) for n in cfg.n_grid])

        def fmt(v):
            return "" if v is None else format(v, ".6f")

        for j in range(cfg.model.p):
            for method in cfg.estimators:
                stats = ["mean", "sd"] + (["prob"] if method != "qmle" else [])
                for stat in stats:
                    row = [f"theta_{j + 1}", format(cfg.theta_star[j], "g"), method, stat]
                    for n in cfg.n_grid:
                        c = self.cells.get((method, n, j))
                        row.append(fmt(None if c is None else c[stat]))
                    w.writerow(row)
        labels = {"under": "under model", "over": "over model", "true": "true model"}
        for method in cfg.estimators:
            for kind, label in labels.items():
                for stat in ("rate", "mc_stderr"):
                    row = ["total", "", method, label if stat == "rate" else f"{label} stderr"]
                    for n in cfg.n_grid:
                        t = self.totals.get((method, n))
                        row.append(fmt(None if t is None else t[kind][stat]))
                    w.writerow(row)
            w.writerow(["total", "", method, "failure rate"]
                       + [fmt(self.failures.get((method, n))) for n in cfg.n_grid])
        return buf.getvalue()

    def to_json(self) -> str:
        cfg = self.config
        doc = {
            "schema_version": SCHEMA_VERSION,
            "master_seed": cfg.master_seed,
            "config": cfg.to_dict(),
            "cells": [
                {"estimator": m, "n": n, "coordinate": j + 1, **v}
                for (m, n, j), v in self.cells.items()
            ],
            "totals": [{"estimator": m, "n": n, **v} for (m, n), v in self.totals.items()],
            "failure_rates": [{"estimator": m, "n": n, "rate": v} for (m, n), v in self.failures.items()],
            "replications": [r.to_dict() for r in self.records],
        }
        return json.dumps(doc, indent=1, sort_keys=True)


def run_study(cfg: ExperimentConfig, progress: Callable[[int, int], None] | None = None) -> StudyReport:
    start = time.perf_counter()
    records = run_records(cfg, progress=progress)
    return StudyReport.aggregate(cfg, records, time.perf_counter() - start)
