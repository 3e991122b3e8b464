"""Protocol matrix orchestration.

A work unit is one (fine-tune kind, split index) pair. Each unit draws its split, fine-tunes at
most once, extracts features and then evaluates every protocol that shares that fine-tuned
extractor, so the clean-test and tainted-test variants differ only in SVR scoping.
"""

from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter

from .cache import FeatureStore, cache_features, compute_features
from .config import ExperimentConfig
from .constants import (
    CLASS_DISTRIBUTION_FILE,
    CONFIG_ECHO_FILE,
    RESULTS_FILE,
    TIMINGS_FILE,
    TRACES_DIR,
)
from .dataset import GeneratorConfig, VideoRecord, generate, index_by_id, ingest_manifest
from .endtoend import RegressionTrace, predict_video, train_regression
from .errors import DomainError, IntegrityError
from .extractor import (
    ClassDistribution,
    TrainTrace,
    class_distribution,
    fine_tune,
    init_extractor,
)
from .metrics import CorrelationResult, MetricSummary, aggregate, correlate
from .pooling import PoolingMethod
from .reference import REFERENCE, ReferenceConstants, ReferenceRow
from .regressor import KernelSpec, SvrConfig, fit, predict
from .splitter import (
    LeakageReport,
    SplitPlan,
    audit,
    derive_seed,
    make_tainted_folds,
    split_clean,
    split_ft_leaky,
    split_seed,
)

log = logging.getLogger(__name__)

_BODY_STREAM = 0xB0D
_FINETUNE_STREAM = 0xF7
_FOLD_STREAM = 0xF01
_ENDTOEND_STREAM = 0xE2E

FineTuneKind = Literal["none", "clean", "leaky", "endtoend"]
SplitScheme = Literal["random-splits", "kfold-replicates"]
_KIND_ORDER: tuple[FineTuneKind, ...] = ("none", "clean", "leaky", "endtoend")

# np.save on a shared store directory is not safe across threads
_CACHE_LOCK = threading.Lock()


class ProtocolId(str, Enum):
    NoFinetune = "NoFinetune"
    LeakyFt_TaintedTest = "LeakyFt_TaintedTest"
    CleanFt_TaintedTest = "CleanFt_TaintedTest"
    LeakyFt_CleanTest = "LeakyFt_CleanTest"
    Clean = "Clean"
    EndToEnd = "EndToEnd"

    @property
    def declared_flags(self) -> tuple[bool | None, bool | None]:
        """(ft_leaky, test_tainted); None where the flag is vacuous."""
        return _DECLARED[self]

    @property
    def fine_tune_kind(self) -> FineTuneKind:
        return _KIND[self]

    @property
    def tainted(self) -> bool:
        return self.declared_flags[1] is True

    @property
    def scheme(self) -> SplitScheme:
        return "kfold-replicates" if self.tainted else "random-splits"


_DECLARED: dict[ProtocolId, tuple[bool | None, bool | None]] = {
    ProtocolId.NoFinetune: (None, None),
    ProtocolId.LeakyFt_TaintedTest: (True, True),
    ProtocolId.CleanFt_TaintedTest: (False, True),
    ProtocolId.LeakyFt_CleanTest: (True, False),
    ProtocolId.Clean: (False, False),
    ProtocolId.EndToEnd: (False, False),
}

_KIND: dict[ProtocolId, FineTuneKind] = {
    ProtocolId.NoFinetune: "none",
    ProtocolId.LeakyFt_TaintedTest: "leaky",
    ProtocolId.CleanFt_TaintedTest: "clean",
    ProtocolId.LeakyFt_CleanTest: "leaky",
    ProtocolId.Clean: "clean",
    ProtocolId.EndToEnd: "endtoend",
}

PROTOCOL_ORDER: tuple[ProtocolId, ...] = tuple(ProtocolId)


class Protocol(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: ProtocolId
    # Ignored by EndToEnd, which averages its own frame-level scores
    pooling: PoolingMethod = PoolingMethod.Mean
    kernel: KernelSpec = Field(default_factory=KernelSpec)


class AuditSummary(BaseModel):
    leaky_videos: int
    tainted_test_videos: int
    test_size: int
    ft_leaky: bool | None
    test_tainted: bool | None


class RunResult(BaseModel):
    protocol: ProtocolId
    pooling: PoolingMethod | None
    kernel: str | None
    scheme: SplitScheme
    split_index: int
    replicate_index: int | None = None
    fold_index: int | None = None
    seed: int
    correlation: CorrelationResult | None = None
    failure: str | None = None
    audit: AuditSummary | None = None
    # Wall-clock; kept out of results.jsonl so reruns serialize identically
    timing_seconds: float = Field(0.0, exclude=True)

    @property
    def ok(self) -> bool:
        return self.failure is None and self.correlation is not None and self.correlation.defined

    def sort_key(self) -> tuple:
        return (
            PROTOCOL_ORDER.index(self.protocol),
            self.pooling.value if self.pooling else "",
            self.kernel or "",
            self.split_index,
            -1 if self.replicate_index is None else self.replicate_index,
            -1 if self.fold_index is None else self.fold_index,
        )


class TimingRecord(BaseModel):
    """One line of timings.jsonl."""

    protocol: ProtocolId
    pooling: PoolingMethod | None
    kernel: str | None
    split_index: int
    replicate_index: int | None
    fold_index: int | None
    timing_seconds: float

    @classmethod
    def of(cls, result: RunResult) -> "TimingRecord":
        return cls(
            protocol=result.protocol,
            pooling=result.pooling,
            kernel=result.kernel,
            split_index=result.split_index,
            replicate_index=result.replicate_index,
            fold_index=result.fold_index,
            timing_seconds=result.timing_seconds,
        )


_DISTRIBUTIONS = TypeAdapter(dict[str, ClassDistribution])


class ProtocolReport(BaseModel):
    protocol: ProtocolId
    pooling: PoolingMethod | None
    kernel: str | None
    scheme: str
    plcc: MetricSummary | None
    srocc: MetricSummary | None
    n_runs: int
    n_failures: int
    # True = done correctly; None = not applicable
    ft_ok: bool | None
    test_ok: bool | None
    reference: ReferenceRow | None = None


@dataclass
class UnitOutcome:
    kind: FineTuneKind
    split_index: int
    results: list[RunResult] = field(default_factory=list)
    trace: TrainTrace | None = None
    regression_trace: RegressionTrace | None = None
    class_distribution: ClassDistribution | None = None


@dataclass
class MatrixOutcome:
    results: list[RunResult]
    traces: dict[tuple[str, int], TrainTrace] = field(default_factory=dict)
    regression_traces: dict[int, RegressionTrace] = field(default_factory=dict)
    class_distributions: dict[tuple[str, int], ClassDistribution] = field(default_factory=dict)


def load_videos(config: ExperimentConfig) -> list[VideoRecord]:
    if config.dataset is not None:
        return ingest_manifest(config.dataset.manifest)
    return generate(config.generator or GeneratorConfig())


def svr_train_scope(protocol: Protocol | ProtocolId | str, plan: SplitPlan) -> tuple[str, ...]:
    """Videos the SVR is fitted on: fine-tuning train+val for clean tests, all non-test videos for tainted folds."""
    pid = protocol.id if isinstance(protocol, Protocol) else ProtocolId(protocol)
    if pid.tainted:
        if plan.svr_train_videos is None:
            raise DomainError(f"{pid.value} needs a tainted fold plan")
        return plan.svr_train_videos
    return plan.fine_tune_videos


def _audit_summary(pid: ProtocolId, report: LeakageReport) -> AuditSummary:
    ft, test = pid.declared_flags
    if (ft is not None and report.ft_leaky != ft) or (test is not None and report.test_tainted != test):
        raise IntegrityError(
            f"{pid.value} declares ft_leaky={ft} test_tainted={test} but the audit found "
            f"ft_leaky={report.ft_leaky} test_tainted={report.test_tainted}"
        )
    return AuditSummary(
        leaky_videos=report.leaky_videos,
        tainted_test_videos=report.tainted_test_videos,
        test_size=report.test_size,
        ft_leaky=report.ft_leaky if ft is not None else None,
        test_tainted=report.test_tainted if test is not None else None,
    )


def _svr_correlation(
    features: FeatureStore,
    train_ids: Sequence[str],
    test_ids: Sequence[str],
    mos: dict[str, float],
    pooling: PoolingMethod,
    kernel: KernelSpec,
    svr: SvrConfig,
) -> CorrelationResult:
    model = fit(features.pooled_rows(train_ids, pooling), np.array([mos[v] for v in train_ids]), kernel, svr)
    predicted = predict(model, features.pooled_rows(test_ids, pooling))
    if not np.isfinite(predicted).all():
        raise DomainError("SVR produced non-finite predictions")
    return correlate(predicted, [mos[v] for v in test_ids])


def _failure(e: Exception) -> str:
    return f"{type(e).__name__}: {e}"


def _skeleton(
    pid: ProtocolId,
    pooling: PoolingMethod | None,
    kernel: KernelSpec | None,
    split_index: int,
    seed: int,
    replicate_index: int | None = None,
    fold_index: int | None = None,
) -> RunResult:
    return RunResult(
        protocol=pid,
        pooling=pooling,
        kernel=kernel.label if kernel is not None else None,
        scheme=pid.scheme,
        split_index=split_index,
        replicate_index=replicate_index,
        fold_index=fold_index,
        seed=seed,
    )


def _svr_run(
    pid: ProtocolId,
    pooling: PoolingMethod,
    kernel: KernelSpec,
    plan: SplitPlan,
    features: FeatureStore,
    videos: Sequence[VideoRecord],
    mos: dict[str, float],
    config: ExperimentConfig,
    split_index: int,
    replicate_index: int | None = None,
    fold_index: int | None = None,
) -> RunResult:
    result = _skeleton(pid, pooling, kernel, split_index, plan.seed, replicate_index, fold_index)
    start = time.perf_counter()
    try:
        result.audit = _audit_summary(pid, audit(plan, videos))
        result.correlation = _svr_correlation(
            features, svr_train_scope(pid, plan), plan.test_videos, mos, pooling, kernel, config.svr
        )
        if not result.correlation.defined:
            result.failure = "UndefinedCorrelationError: constant predictions"
    except Exception as e:  # noqa: BLE001
        log.error("%s split=%d fold=%s failed: %s", pid.value, split_index, fold_index, e)
        result.failure = _failure(e)
    result.timing_seconds = time.perf_counter() - start
    return result


def _expected_runs(
    pids: Iterable[ProtocolId],
    combos: Sequence[tuple[PoolingMethod, KernelSpec]],
    split_index: int,
    seed: int,
    config: ExperimentConfig,
) -> list[RunResult]:
    """Placeholder records for every run a unit would have produced."""
    out: list[RunResult] = []
    for pid in pids:
        if pid is ProtocolId.EndToEnd:
            out.append(_skeleton(pid, None, None, split_index, seed))
            continue
        slots = (
            [(r, k) for r in range(config.splits.replicates) for k in range(config.splits.folds)]
            if pid.tainted
            else [(None, None)]
        )
        for pooling, kernel in combos:
            out.extend(_skeleton(pid, pooling, kernel, split_index, seed, r, k) for r, k in slots)
    return out


def _make_plan(videos: Sequence[VideoRecord], kind: FineTuneKind, seed: int, config: ExperimentConfig) -> SplitPlan:
    s = config.splits
    splitter = split_ft_leaky if kind == "leaky" else split_clean
    return splitter(
        videos,
        s.frame_fraction,
        s.train_val_ratio,
        seed,
        frame_sampling=s.frame_sampling,
        video_split_ratio=s.video_split_ratio,
    )


def _features(extractor, videos: Sequence[VideoRecord], config: ExperimentConfig) -> FeatureStore:
    if config.cache_dir is None:
        return compute_features(extractor, videos)
    with _CACHE_LOCK:
        return cache_features(extractor, videos, config.cache_dir)


def _run_unit(
    videos: Sequence[VideoRecord],
    kind: FineTuneKind,
    split_index: int,
    pids: Sequence[ProtocolId],
    combos: Sequence[tuple[PoolingMethod, KernelSpec]],
    config: ExperimentConfig,
) -> UnitOutcome:
    seed = split_seed(config.seed, split_index)
    mine = [p for p in pids if p.fine_tune_kind == kind]
    outcome = UnitOutcome(kind=kind, split_index=split_index)
    start = time.perf_counter()
    try:
        plan = _make_plan(videos, kind, seed, config)
        arch = config.extractor.architecture
        base = init_extractor(
            videos[0].feature_dim,
            arch.model_copy(update={"seed": derive_seed(config.seed, _BODY_STREAM, arch.seed)}),
        )
        if kind == "endtoend":
            return _run_endtoend(videos, plan, base, split_index, seed, config, outcome, start)

        extractor = base
        if kind != "none":
            training = config.extractor.training.model_copy(
                update={"seed": derive_seed(seed, _FINETUNE_STREAM)}
            )
            extractor, outcome.trace = fine_tune(
                base, plan, videos, training, monitor_videos=plan.test_videos
            )
            by_id = index_by_id(videos)
            outcome.class_distribution = class_distribution(
                extractor, [by_id[v] for v in plan.test_videos]
            )
        features = _features(extractor, videos, config)
    except Exception as e:  # noqa: BLE001
        log.error("unit %s split=%d failed before evaluation: %s", kind, split_index, e)
        outcome.results = _expected_runs(mine, combos, split_index, seed, config)
        for r in outcome.results:
            r.failure = _failure(e)
            r.timing_seconds = time.perf_counter() - start
        return outcome

    mos = {v.video_id: v.mos for v in videos}
    for pid in mine:
        if not pid.tainted:
            for pooling, kernel in combos:
                outcome.results.append(
                    _svr_run(pid, pooling, kernel, plan, features, videos, mos, config, split_index)
                )
            continue
        try:
            fold_sets = make_tainted_folds(
                videos,
                config.splits.folds,
                config.splits.replicates,
                plan,
                derive_seed(seed, _FOLD_STREAM),
            )
        except Exception as e:  # noqa: BLE001
            log.error("%s split=%d: cannot build folds: %s", pid.value, split_index, e)
            for r in _expected_runs([pid], combos, split_index, seed, config):
                r.failure = _failure(e)
                outcome.results.append(r)
            continue
        for fold_set in fold_sets:
            for fold_index, fold in enumerate(fold_set.folds):
                for pooling, kernel in combos:
                    outcome.results.append(
                        _svr_run(
                            pid, pooling, kernel, fold, features, videos, mos, config,
                            split_index, fold_set.replicate_index, fold_index,
                        )
                    )
    log.info(
        "unit %s split=%d: %d runs in %.1fs",
        kind, split_index, len(outcome.results), time.perf_counter() - start,
    )
    return outcome


def _run_endtoend(
    videos: Sequence[VideoRecord],
    plan: SplitPlan,
    base,
    split_index: int,
    seed: int,
    config: ExperimentConfig,
    outcome: UnitOutcome,
    start: float,
) -> UnitOutcome:
    pid = ProtocolId.EndToEnd
    result = _skeleton(pid, None, None, split_index, seed)
    try:
        result.audit = _audit_summary(pid, audit(plan, videos))
        head = config.endtoend.model_copy(update={"seed": derive_seed(seed, _ENDTOEND_STREAM)})
        model, outcome.regression_trace = train_regression(base, plan, videos, head)
        by_id = index_by_id(videos)
        predicted = [predict_video(model, by_id[v]) for v in plan.test_videos]
        result.correlation = correlate(predicted, [by_id[v].mos for v in plan.test_videos])
        if not result.correlation.defined:
            result.failure = "UndefinedCorrelationError: constant predictions"
    except Exception as e:  # noqa: BLE001
        log.error("EndToEnd split=%d failed: %s", split_index, e)
        result.failure = _failure(e)
    result.timing_seconds = time.perf_counter() - start
    outcome.results.append(result)
    return outcome


def run_matrix(
    videos: Sequence[VideoRecord],
    config: ExperimentConfig,
    *,
    parallel: int | None = None,
) -> MatrixOutcome:
    """Run every configured protocol over `config.n_splits` derived split seeds."""
    pids = [ProtocolId(p) for p in config.protocols.ids]
    if not pids:
        raise DomainError("no protocols selected")
    if not videos:
        raise DomainError("dataset is empty")
    # precondition: the dataset can populate a split at all
    _make_plan(videos, "clean", split_seed(config.seed, 0), config)
    if any(p.tainted for p in pids) and config.splits.folds > len(videos):
        raise DomainError(f"{config.splits.folds} folds requested for {len(videos)} videos")

    combos = config.protocols.combinations()
    kinds = [k for k in _KIND_ORDER if any(p.fine_tune_kind == k for p in pids)]
    jobs = [(kind, i) for i in range(config.n_splits) for kind in kinds]
    workers = parallel or config.parallel
    log.info("running %d units (%s) on %d worker(s)", len(jobs), ", ".join(p.value for p in pids), workers)

    def work(job: tuple[FineTuneKind, int]) -> UnitOutcome:
        return _run_unit(videos, job[0], job[1], pids, combos, config)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(work, jobs))
    else:
        outcomes = [work(j) for j in jobs]

    matrix = MatrixOutcome(results=[])
    for o in outcomes:
        matrix.results.extend(o.results)
        if o.trace is not None:
            matrix.traces[(o.kind, o.split_index)] = o.trace
        if o.regression_trace is not None:
            matrix.regression_traces[o.split_index] = o.regression_trace
        if o.class_distribution is not None:
            matrix.class_distributions[(o.kind, o.split_index)] = o.class_distribution
    matrix.results.sort(key=RunResult.sort_key)
    failures = sum(1 for r in matrix.results if not r.ok)
    if failures:
        log.warning("%d of %d runs failed", failures, len(matrix.results))
    return matrix


def run_protocol(
    videos: Sequence[VideoRecord],
    protocol: Protocol,
    n_splits: int,
    config: ExperimentConfig,
) -> list[RunResult]:
    protocols = config.protocols.model_copy(
        update={
            "ids": [protocol.id.value],
            "pooling": protocol.pooling,
            "kernel": protocol.kernel,
            "grid": False,
        }
    )
    scoped = config.model_copy(update={"protocols": protocols, "n_splits": n_splits})
    return run_matrix(videos, scoped).results


def _scheme_label(pid: ProtocolId, runs: Sequence[RunResult]) -> str:
    splits = len({r.split_index for r in runs})
    if not pid.tainted:
        return f"{splits} random splits"
    folds = 1 + max((r.fold_index or 0) for r in runs)
    reps = 1 + max((r.replicate_index or 0) for r in runs)
    return f"{folds}-fold x {reps} replicates over {splits} splits"


def summarize(
    results: Sequence[RunResult],
    reference: ReferenceConstants = REFERENCE,
) -> list[ProtocolReport]:
    """One report per (protocol, pooling, kernel), built only from that group's runs."""
    groups: dict[tuple, list[RunResult]] = {}
    for r in sorted(results, key=RunResult.sort_key):
        groups.setdefault((r.protocol, r.pooling, r.kernel), []).append(r)

    reports: list[ProtocolReport] = []
    for (pid, pooling, kernel), runs in groups.items():
        good = [r.correlation for r in runs if r.ok]
        agg = aggregate(good) if good else None  # type: ignore[arg-type]
        ft, test = pid.declared_flags
        reports.append(
            ProtocolReport(
                protocol=pid,
                pooling=pooling,
                kernel=kernel,
                scheme=_scheme_label(pid, runs),
                plcc=agg.plcc if agg else None,
                srocc=agg.srocc if agg else None,
                n_runs=len(runs),
                n_failures=len(runs) - len(good),
                ft_ok=None if ft is None else not ft,
                test_ok=None if test is None else not test,
                reference=reference.for_protocol(pid.value),
            )
        )
    return reports


def write_results(results: Sequence[RunResult], out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ordered = sorted(results, key=RunResult.sort_key)
    path = out / RESULTS_FILE
    path.write_text("".join(r.model_dump_json() + "\n" for r in ordered), encoding="utf-8")
    timings = "".join(TimingRecord.of(r).model_dump_json() + "\n" for r in ordered)
    (out / TIMINGS_FILE).write_text(timings, encoding="utf-8")
    return path


def read_results(path: str | Path) -> list[RunResult]:
    """Read results.jsonl (or the run directory holding it)."""
    path = Path(path)
    if path.is_dir():
        path = path / RESULTS_FILE
    return [
        RunResult.model_validate_json(line)
        for line in path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]


def write_run(outcome: MatrixOutcome, config: ExperimentConfig, out_dir: str | Path) -> Path:
    """Persist results, timings, training traces, class distributions and the resolved config."""
    out = Path(out_dir)
    path = write_results(outcome.results, out)
    traces = out / TRACES_DIR
    if outcome.traces or outcome.regression_traces:
        traces.mkdir(exist_ok=True)
    for (kind, split), trace in sorted(outcome.traces.items()):
        (traces / f"{kind}-{split}.csv").write_text(trace.to_csv(), encoding="utf-8")
        (traces / f"{kind}-{split}.json").write_text(trace.model_dump_json(), encoding="utf-8")
    for split, rtrace in sorted(outcome.regression_traces.items()):
        (traces / f"endtoend-{split}.csv").write_text(rtrace.to_csv(), encoding="utf-8")
    dists = {f"{k}-{s}": d for (k, s), d in sorted(outcome.class_distributions.items())}
    (out / CLASS_DISTRIBUTION_FILE).write_bytes(_DISTRIBUTIONS.dump_json(dists, indent=2))
    (out / CONFIG_ECHO_FILE).write_text(config.model_dump_json(indent=2), encoding="utf-8")
    log.info("wrote %d results to %s", len(outcome.results), path)
    return path
