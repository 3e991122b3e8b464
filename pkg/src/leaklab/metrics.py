from __future__ import annotations

import logging
from typing import Sequence

import numpy as np
from pydantic import BaseModel
from scipy.stats import rankdata

from .errors import DomainError, UndefinedCorrelationError

log = logging.getLogger(__name__)


class CorrelationResult(BaseModel):
    plcc: float | None
    srocc: float | None
    n: int

    @property
    def defined(self) -> bool:
        return self.plcc is not None and self.srocc is not None


class MetricSummary(BaseModel):
    mean: float
    std: float

    def __str__(self) -> str:
        return f"{self.mean:.2f} (±{self.std:.2f})"


class AggregateResult(BaseModel):
    plcc: MetricSummary
    srocc: MetricSummary
    n: int


def _pair(x: Sequence[float], y: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(x, dtype=np.float64).ravel()
    b = np.asarray(y, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DomainError(f"correlation inputs differ in length ({a.size} vs {b.size})")
    if a.size < 2:
        raise DomainError(f"correlation needs at least 2 samples, got {a.size}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise DomainError("correlation inputs must be finite")
    return a, b


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    sa = np.sqrt(da @ da)
    sb = np.sqrt(db @ db)
    if sa == 0.0 or sb == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a constant sequence")
    r = float((da @ db) / (sa * sb))
    return max(-1.0, min(1.0, r))


def plcc(x: Sequence[float], y: Sequence[float]) -> float:
    return _pearson(*_pair(x, y))


def average_ranks(x: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    return rankdata(np.asarray(x, dtype=np.float64), method="average")


def srocc(x: Sequence[float], y: Sequence[float]) -> float:
    a, b = _pair(x, y)
    return _pearson(average_ranks(a), average_ranks(b))


def correlate(predictions: Sequence[float], truth: Sequence[float]) -> CorrelationResult:
    """Both metrics at once; an undefined metric is None, never 0."""
    n = len(predictions)
    try:
        p = plcc(predictions, truth)
        s = srocc(predictions, truth)
    except UndefinedCorrelationError:
        log.warning("undefined correlation over %d samples (constant predictions?)", n)
        return CorrelationResult(plcc=None, srocc=None, n=n)
    return CorrelationResult(plcc=p, srocc=s, n=n)


def _summary(values: list[float]) -> MetricSummary:
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return MetricSummary(mean=float(arr.mean()), std=std)


def aggregate(results: Sequence[CorrelationResult]) -> AggregateResult:
    """Mean and sample standard deviation (n - 1) per metric."""
    if not results:
        raise DomainError("aggregate needs at least one result")
    if not all(r.defined for r in results):
        raise DomainError("aggregate only accepts defined correlation results")
    return AggregateResult(
        plcc=_summary([r.plcc for r in results]),  # type: ignore[misc]
        srocc=_summary([r.srocc for r in results]),  # type: ignore[misc]
        n=len(results),
    )
