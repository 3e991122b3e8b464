from __future__ import annotations

import pytest

from conftest import tiny_config
from leaklab import harness
from leaklab.dataset import generate
from leaklab.errors import DomainError, IntegrityError
from leaklab.harness import (
    Protocol,
    ProtocolId,
    TimingRecord,
    read_results,
    run_matrix,
    run_protocol,
    summarize,
    svr_train_scope,
    write_results,
    write_run,
)
from leaklab.pooling import PoolingMethod
from leaklab.regressor import KernelSpec
from leaklab.splitter import LeakageReport, make_tainted_folds, split_clean


def _only(*ids: str, **overrides):
    return tiny_config(protocols={"ids": list(ids)}, **overrides)


def _videos(cfg):
    return generate(cfg.generator)


def test_clean_protocol_runs_once_per_split():
    cfg = _only("Clean")
    results = run_matrix(_videos(cfg), cfg).results
    assert len(results) == cfg.n_splits
    assert [r.split_index for r in results] == [0, 1]
    for r in results:
        assert r.ok, r.failure
        assert r.scheme == "random-splits"
        assert (r.audit.ft_leaky, r.audit.test_tainted) == (False, False)
        assert r.audit.leaky_videos == 0 and r.audit.tainted_test_videos == 0


def test_leaky_tainted_protocol_runs_every_fold():
    cfg = _only("LeakyFt_TaintedTest")
    results = run_matrix(_videos(cfg), cfg).results
    assert len(results) == cfg.n_splits * cfg.splits.replicates * cfg.splits.folds
    for r in results:
        assert r.ok, r.failure
        assert r.scheme == "kfold-replicates"
        assert (r.audit.ft_leaky, r.audit.test_tainted) == (True, True)


def test_replicates_use_independent_fold_seeds():
    cfg = _only("CleanFt_TaintedTest")
    results = run_matrix(_videos(cfg), cfg).results
    for split in range(cfg.n_splits):
        seeds = [r.seed for r in results if r.split_index == split]
        assert len(seeds) == len(set(seeds)) == cfg.splits.replicates * cfg.splits.folds


def test_no_finetune_flags_are_vacuous():
    cfg = _only("NoFinetune")
    outcome = run_matrix(_videos(cfg), cfg)
    assert all(r.audit.ft_leaky is None and r.audit.test_tainted is None for r in outcome.results)
    assert outcome.traces == {}


def test_svr_train_scope(small_videos):
    plan = split_clean(small_videos, 0.2, (3, 1), seed=0)
    assert svr_train_scope(ProtocolId.Clean, plan) == plan.fine_tune_videos
    assert svr_train_scope("LeakyFt_CleanTest", plan) == plan.fine_tune_videos
    with pytest.raises(DomainError):
        svr_train_scope(ProtocolId.CleanFt_TaintedTest, plan)
    fold = make_tainted_folds(small_videos, 3, 1, plan, seed=1)[0].folds[0]
    assert svr_train_scope(Protocol(id=ProtocolId.CleanFt_TaintedTest), fold) == fold.svr_train_videos
    assert not set(fold.svr_train_videos) & set(fold.test_videos)


def test_declared_flags_must_match_the_audit():
    report = LeakageReport(
        leaky_videos=0, tainted_test_videos=3, test_size=8, ft_leaky=False, test_tainted=True,
        declared_ft_leaky=False, declared_test_tainted=True,
    )
    with pytest.raises(IntegrityError):
        harness._audit_summary(ProtocolId.Clean, report)
    assert harness._audit_summary(ProtocolId.CleanFt_TaintedTest, report).test_tainted is True


def test_reruns_serialize_identically(tmp_path):
    cfg = _only("Clean", "LeakyFt_CleanTest", "EndToEnd")
    videos = _videos(cfg)
    a = write_results(run_matrix(videos, cfg).results, tmp_path / "a")
    b = write_results(run_matrix(videos, cfg, parallel=3).results, tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()


def test_failed_fold_does_not_stop_the_matrix(monkeypatch):
    original = harness._svr_correlation

    def flaky(features, train_ids, test_ids, *args):
        if "v00000" in test_ids:
            raise RuntimeError("synthetic solver failure")
        return original(features, train_ids, test_ids, *args)

    monkeypatch.setattr(harness, "_svr_correlation", flaky)
    cfg = _only("LeakyFt_TaintedTest")
    results = run_matrix(_videos(cfg), cfg).results
    failed = [r for r in results if not r.ok]
    # each replicate's folds partition the videos, so exactly one fold per replicate holds v00000
    assert len(failed) == cfg.n_splits * cfg.splits.replicates
    assert all("synthetic solver failure" in r.failure for r in failed)
    (report,) = summarize(results)
    assert report.n_failures == len(failed)
    assert report.n_runs == len(results)
    assert report.plcc is not None


def test_endtoend_has_no_pooling_or_kernel():
    cfg = _only("EndToEnd")
    outcome = run_matrix(_videos(cfg), cfg)
    assert len(outcome.results) == cfg.n_splits
    for r in outcome.results:
        assert r.ok, r.failure
        assert r.pooling is None and r.kernel is None
    assert sorted(outcome.regression_traces) == [0, 1]


def test_run_protocol_scopes_the_config():
    cfg = tiny_config()
    protocol = Protocol(id=ProtocolId.Clean, pooling=PoolingMethod.Max, kernel=KernelSpec(kind="linear"))
    results = run_protocol(_videos(cfg), protocol, 1, cfg)
    assert len(results) == 1
    assert (results[0].protocol, results[0].pooling, results[0].kernel) == (
        ProtocolId.Clean, PoolingMethod.Max, "linear",
    )


def test_grid_reports_every_combination():
    cfg = tiny_config(protocols={"ids": ["NoFinetune"], "grid": True}, n_splits=1)
    reports = summarize(run_matrix(_videos(cfg), cfg).results)
    assert len(reports) == 12
    assert len({(r.pooling, r.kernel) for r in reports}) == 12


def test_summary_rows_and_reference():
    cfg = _only("Clean", "LeakyFt_TaintedTest")
    reports = summarize(run_matrix(_videos(cfg), cfg).results)
    assert [r.protocol for r in reports] == [ProtocolId.LeakyFt_TaintedTest, ProtocolId.Clean]
    leaky, clean = reports
    assert (clean.ft_ok, clean.test_ok) == (True, True)
    assert (leaky.ft_ok, leaky.test_ok) == (False, False)
    assert clean.reference.plcc == 0.71
    assert clean.scheme == "2 random splits"
    assert leaky.scheme == "3-fold x 2 replicates over 2 splits"
    assert leaky.n_runs == 12


def test_results_file_round_trip(tmp_path):
    cfg = _only("Clean", "EndToEnd")
    outcome = run_matrix(_videos(cfg), cfg)
    path = write_run(outcome, cfg, tmp_path)
    assert "timing" not in path.read_text(encoding="utf-8")
    back = read_results(tmp_path)
    assert [r.model_dump() for r in back] == [r.model_dump() for r in outcome.results]
    timings = (tmp_path / "timings.jsonl").read_text(encoding="utf-8").splitlines()
    assert len(timings) == len(back)
    assert all(TimingRecord.model_validate_json(t).timing_seconds >= 0 for t in timings)
    assert (tmp_path / "traces" / "clean-0.csv").exists()
    assert (tmp_path / "traces" / "endtoend-1.csv").exists()
    assert (tmp_path / "config.json").exists()


def test_empty_dataset_is_rejected():
    cfg = tiny_config()
    with pytest.raises(DomainError):
        run_matrix([], cfg)
