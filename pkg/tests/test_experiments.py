import csv
import io
import json

import numpy as np
import pytest

from pqla.errors import ConfigurationError, StudyError
from pqla.experiments import (
    DEFAULT_THETA,
    ExperimentConfig,
    ReplicationRecord,
    StudyReport,
    classify_selection,
    derive_seed,
    run_records,
    run_replication,
    run_study,
)
from pqla.penalties import SupportPartition

TRUTH = SupportPartition.from_theta(DEFAULT_THETA)


def small_config(**kw):
    base = dict(n_grid=(300, 600), replications=4)
    base.update(kw)
    return ExperimentConfig(**base)


# --- selection classes ---------------------------------------------------------------


def test_exact_selection():
    assert classify_selection(DEFAULT_THETA, TRUTH) == "exact"


def test_all_zero_is_under():
    assert classify_selection(np.zeros(10), TRUTH) == "under"


def test_no_zero_is_over():
    assert classify_selection(np.ones(10), TRUTH) == "over"


def test_mixed_selection():
    theta = np.array(DEFAULT_THETA)
    theta[0], theta[1] = 0.5, 0.0
    assert classify_selection(theta, TRUTH) == "mixed"


def test_selection_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        classify_selection(np.zeros(3), TRUTH)


# --- configuration and seeds ------------------------------------------------------------


def test_default_configuration():
    cfg = ExperimentConfig()
    assert cfg.theta_star == DEFAULT_THETA
    assert cfg.n_grid == (1000, 2000, 3000, 10000)
    assert cfg.penalty.q == 0.3 and cfg.penalty.q_prime == pytest.approx(2 / 3)
    assert cfg.support.zero_set == (0, 2, 5, 9)


def test_invalid_configurations():
    with pytest.raises(ConfigurationError):
        ExperimentConfig(replications=0)
    with pytest.raises(ConfigurationError):
        ExperimentConfig(n_grid=(2000, 1000))
    with pytest.raises(ConfigurationError):
        ExperimentConfig(estimators=("mle",))
    with pytest.raises(ConfigurationError):
        ExperimentConfig(theta_star=(9.0,) + DEFAULT_THETA[1:])


def test_reduced_configuration():
    cfg = ExperimentConfig().reduced(2)
    assert cfg.model.p == 2 and cfg.theta_star == (0.0, 1.0)


def test_derived_seed_is_pure_and_distinct():
    assert derive_seed(1, 1000, 5) == derive_seed(1, 1000, 5)
    seeds = {derive_seed(1, n, i) for n in (1000, 2000) for i in range(50)}
    assert len(seeds) == 100
    assert derive_seed(2, 1000, 5) != derive_seed(1, 1000, 5)


# --- replications --------------------------------------------------------------------------


def test_replication_is_deterministic():
    cfg = small_config()
    a, b = run_replication(cfg, 300, 1), run_replication(cfg, 300, 1)
    assert a.to_dict() == b.to_dict()
    assert a.seed == derive_seed(cfg.master_seed, 300, 1)


def test_estimator_subset():
    rec = run_replication(small_config(estimators=("qmle",)), 300, 0)
    assert set(rec.estimates) == {"qmle"}
    assert "penalized" not in rec.selection


def test_replication_index_checked():
    with pytest.raises(ConfigurationError):
        run_replication(small_config(), 300, 4)


def test_qbe_estimator_runs():
    from pqla.optimizer import McmcOptions

    cfg = small_config(estimators=("qmle", "qbe"), mcmc=McmcOptions(iterations=3000, burn_in=1000, adapt_steps=500))
    rec = run_replication(cfg, 300, 0)
    assert rec.estimates["qbe"] is not None
    assert len(rec.estimates["qbe"]) == 10


def test_records_sorted_and_complete():
    cfg = small_config()
    recs = run_records(cfg)
    assert [(r.n, r.index) for r in recs] == [(n, i) for n in cfg.n_grid for i in range(4)]


# --- aggregation -------------------------------------------------------------------------------


def test_single_replication_aggregation():
    report = run_study(small_config(replications=1))
    for cell in report.cells.values():
        assert cell["sd"] is None
        assert cell["prob"] in (0.0, 1.0)
    rows = list(csv.reader(line for line in io.StringIO(report.to_csv()) if not line.startswith("#")))
    sd_rows = [r for r in rows if r[3] == "sd"]
    assert all(v == "" for r in sd_rows for v in r[4:])


def test_all_failures_raise_study_error():
    cfg = small_config(replications=2)
    failed = [ReplicationRecord(n, i, 0, {m: None for m in cfg.estimators}, {m: False for m in cfg.estimators},
                                {m: None for m in cfg.estimators}, {"qmle": "boom"})
              for n in cfg.n_grid for i in range(2)]
    with pytest.raises(StudyError, match="n=300"):
        StudyReport.aggregate(cfg, failed)


def test_failures_excluded_from_cells_but_counted():
    cfg = small_config(replications=2)
    good = run_records(cfg)
    broken = ReplicationRecord(good[0].n, good[0].index, good[0].seed, {"qmle": None, "penalized": None},
                               {"qmle": False, "penalized": False}, {"qmle": None, "penalized": None}, {})
    report = StudyReport.aggregate(cfg, [broken] + good[1:])
    assert report.failures[("qmle", 300)] == 0.5
    assert report.cell("qmle", 300, 0)["count"] == 1


def test_report_formats(tmp_path):
    report = run_study(small_config())
    text = report.to_csv()
    assert text.startswith("# schema_version=pqla-study/1 master_seed=20240601")
    rows = list(csv.reader(line for line in io.StringIO(text) if not line.startswith("#")))
    assert rows[0] == ["row", "true", "estimator", "statistic", "300", "600"]
    labels = {r[3] for r in rows if r[0] == "total"}
    assert {"under model", "over model", "true model", "true model stderr", "failure rate"} <= labels
    doc = json.loads(report.to_json())
    assert doc["schema_version"] == "pqla-study/1"
    assert doc["master_seed"] == 20240601
    assert len(doc["replications"]) == 8
    assert all("seed" in r for r in doc["replications"])
    assert report.to_json() == run_study(small_config()).to_json()


def test_true_rate_bounded_by_under_and_over():
    report = run_study(small_config(replications=6))
    for t in report.totals.values():
        assert t["true"]["rate"] <= min(t["under"]["rate"], t["over"]["rate"])
        for k in ("true", "under", "over"):
            assert 0.0 <= t[k]["rate"] <= 1.0


def test_parallel_matches_serial():
    cfg = small_config(replications=3)
    assert run_study(cfg.with_(workers=2)).to_json() == run_study(cfg).to_json()


# --- the default study -----------------------------------------------------------------------------


def test_qmle_theta5_concentrated_at_large_n(default_study):
    est = [r.estimates["qmle"][4] for r in default_study.records if r.n == 10_000 and r.ok("qmle")]
    assert np.mean(np.abs(np.array(est) - 2.0) <= 0.3) >= 0.99


def test_true_model_rate_nondecreasing(default_study):
    prev = None
    for n in default_study.config.n_grid:
        t = default_study.totals[("penalized", n)]["true"]
        if prev is not None:
            assert t["rate"] >= prev - t["mc_stderr"]
        prev = t["rate"]


def test_penalized_shrinks_positive_coordinates(default_study):
    cfg = default_study.config
    gaps = []
    for n in cfg.n_grid:
        row = []
        for j in cfg.support.nonzero_set:
            pen = default_study.cell("penalized", n, j)["mean"]
            base = default_study.cell("qmle", n, j)["mean"]
            assert pen <= base
            row.append(base - pen)
        gaps.append(np.mean(row))
    assert gaps[-1] < gaps[0]
