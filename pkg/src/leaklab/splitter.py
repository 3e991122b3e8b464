"""Auditable split plans: the correct protocol, frame-pooled leakage, and tainted SVR folds."""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .dataset import VideoRecord, index_by_id
from .errors import DomainError, IntegrityError

log = logging.getLogger(__name__)

FrameRef = tuple[str, int]
FrameSampling = Literal["random", "strided"]

_TAINT_STREAM = 0x7A1
_SPLIT_STREAM = 0x5B1


class SplitPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    train_videos: tuple[str, ...]
    val_videos: tuple[str, ...]
    test_videos: tuple[str, ...]
    train_frames: tuple[FrameRef, ...]
    val_frames: tuple[FrameRef, ...]
    # Set only for tainted folds, where the SVR trains on every non-test video
    svr_train_videos: tuple[str, ...] | None = None
    ft_leaky: bool
    test_tainted: bool
    seed: int

    @property
    def fine_tune_videos(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.train_videos) | set(self.val_videos)))


class FoldSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    folds: tuple[SplitPlan, ...] = Field(min_length=2)
    replicate_index: int
    # Share of each fold's test videos that were part of the fine-tuning pool
    overlap_fractions: tuple[float, ...]


class LeakageReport(BaseModel):
    leaky_videos: int
    tainted_test_videos: int
    test_size: int
    ft_leaky: bool
    test_tainted: bool
    declared_ft_leaky: bool
    declared_test_tainted: bool

    @property
    def consistent(self) -> bool:
        return (
            self.ft_leaky == self.declared_ft_leaky
            and self.test_tainted == self.declared_test_tainted
        )

    @property
    def tainted_fraction(self) -> float:
        return self.tainted_test_videos / self.test_size if self.test_size else 0.0


def derive_seed(master_seed: int, *keys: int) -> int:
    """Splittable counter: a distinct, reproducible 64-bit seed per key path."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def split_seed(master_seed: int, split_index: int) -> int:
    return derive_seed(master_seed, _SPLIT_STREAM, split_index)


def _ratio_share(ratio: Sequence[float]) -> float:
    if len(ratio) != 2 or ratio[0] <= 0 or ratio[1] <= 0:
        raise DomainError(f"ratio must be two positive parts, got {tuple(ratio)}")
    return ratio[1] / (ratio[0] + ratio[1])


def _sample_count(n_frames: int, fraction: float) -> int:
    return max(1, math.floor(fraction * n_frames + 1e-9))


def _sample_frames(
    video: VideoRecord, fraction: float, rng: np.random.Generator, sampling: FrameSampling
) -> list[int]:
    k = _sample_count(video.n_frames, fraction)
    if sampling == "strided":
        return sorted({int(i) for i in np.linspace(0, video.n_frames - 1, k).round()})
    return sorted(int(i) for i in rng.choice(video.n_frames, size=k, replace=False))


def _pool_and_sample(
    videos: Sequence[VideoRecord],
    frame_fraction: float,
    seed: int,
    sampling: FrameSampling,
    video_split_ratio: Sequence[float],
) -> tuple[list[str], list[str], dict[str, list[int]], np.random.Generator]:
    if not 0.0 < frame_fraction <= 1.0:
        raise DomainError(f"frame_fraction must be in (0, 1], got {frame_fraction}")
    if len(videos) < 5:
        raise DomainError(f"need at least 5 videos to split, got {len(videos)}")
    by_id = index_by_id(videos)
    ids = sorted(by_id)
    rng = np.random.default_rng(seed)
    perm = [ids[i] for i in rng.permutation(len(ids))]
    n_test = math.floor(len(ids) * _ratio_share(video_split_ratio))
    test, pool = sorted(perm[:n_test]), sorted(perm[n_test:])
    sampled = {vid: _sample_frames(by_id[vid], frame_fraction, rng, sampling) for vid in pool}
    return test, pool, sampled, rng


def split_clean(
    videos: Sequence[VideoRecord],
    frame_fraction: float = 0.2,
    train_val_ratio: Sequence[float] = (3, 1),
    seed: int = 0,
    *,
    frame_sampling: FrameSampling = "random",
    video_split_ratio: Sequence[float] = (4, 1),
) -> SplitPlan:
    """Video-level 4:1 pool/test split, then a video-level train/val split of the pool."""
    test, pool, sampled, rng = _pool_and_sample(
        videos, frame_fraction, seed, frame_sampling, video_split_ratio
    )
    shuffled = [pool[i] for i in rng.permutation(len(pool))]
    n_val = math.floor(len(pool) * _ratio_share(train_val_ratio))
    val, train = sorted(shuffled[:n_val]), sorted(shuffled[n_val:])
    if not (test and val and train):
        raise DomainError(
            f"{len(videos)} videos cannot populate train/val/test "
            f"(got {len(train)}/{len(val)}/{len(test)})"
        )
    plan = SplitPlan(
        train_videos=tuple(train),
        val_videos=tuple(val),
        test_videos=tuple(test),
        train_frames=tuple((v, i) for v in train for i in sampled[v]),
        val_frames=tuple((v, i) for v in val for i in sampled[v]),
        ft_leaky=False,
        test_tainted=False,
        seed=seed,
    )
    log.debug("clean split seed=%d: %d/%d/%d videos", seed, len(train), len(val), len(test))
    return plan


def split_ft_leaky(
    videos: Sequence[VideoRecord],
    frame_fraction: float = 0.2,
    train_val_ratio: Sequence[float] = (3, 1),
    seed: int = 0,
    *,
    frame_sampling: FrameSampling = "random",
    video_split_ratio: Sequence[float] = (4, 1),
) -> SplitPlan:
    """Same video split and frame sample as split_clean, but train/val is drawn from pooled frames."""
    test, pool, sampled, rng = _pool_and_sample(
        videos, frame_fraction, seed, frame_sampling, video_split_ratio
    )
    frames: list[tuple[str, int]] = [(v, i) for v in pool for i in sampled[v]]
    shuffled = [frames[i] for i in rng.permutation(len(frames))]
    n_val = math.floor(len(frames) * _ratio_share(train_val_ratio))
    val_frames, train_frames = sorted(shuffled[:n_val]), sorted(shuffled[n_val:])
    if not (test and val_frames and train_frames):
        raise DomainError(
            f"{len(videos)} videos cannot populate train/val/test "
            f"(got {len(train_frames)}/{len(val_frames)} frames, {len(test)} test videos)"
        )
    return SplitPlan(
        train_videos=tuple(sorted({v for v, _ in train_frames})),
        val_videos=tuple(sorted({v for v, _ in val_frames})),
        test_videos=tuple(test),
        train_frames=tuple(train_frames),
        val_frames=tuple(val_frames),
        ft_leaky=True,
        test_tainted=False,
        seed=seed,
    )


def make_tainted_folds(
    videos: Sequence[VideoRecord],
    k: int,
    replicates: int,
    ft_plan: SplitPlan,
    seed: int,
) -> list[FoldSet]:
    """K-fold partitions of the whole dataset that ignore which videos fine-tuning already saw."""
    ids = sorted(index_by_id(videos))
    if k < 2:
        raise DomainError(f"need at least 2 folds, got {k}")
    if k > len(ids):
        raise DomainError(f"{k} folds requested for {len(ids)} videos")
    if replicates < 1:
        raise DomainError(f"replicates must be positive, got {replicates}")

    seen = set(ft_plan.fine_tune_videos)
    fold_sets: list[FoldSet] = []
    for r in range(replicates):
        rng = np.random.default_rng(derive_seed(seed, _TAINT_STREAM, r))
        perm = [ids[i] for i in rng.permutation(len(ids))]
        plans: list[SplitPlan] = []
        overlaps: list[float] = []
        for fold_index, chunk in enumerate(np.array_split(np.asarray(perm, dtype=object), k)):
            test = sorted(str(v) for v in chunk)
            test_set = set(test)
            overlap = len(test_set & seen)
            plans.append(
                SplitPlan(
                    train_videos=ft_plan.train_videos,
                    val_videos=ft_plan.val_videos,
                    test_videos=tuple(test),
                    train_frames=ft_plan.train_frames,
                    val_frames=ft_plan.val_frames,
                    svr_train_videos=tuple(v for v in ids if v not in test_set),
                    ft_leaky=ft_plan.ft_leaky,
                    test_tainted=overlap > 0,
                    seed=derive_seed(seed, _TAINT_STREAM, r, fold_index),
                )
            )
            overlaps.append(overlap / len(test))
        fold_sets.append(
            FoldSet(folds=tuple(plans), replicate_index=r, overlap_fractions=tuple(overlaps))
        )
    log.debug("built %d x %d tainted folds (seed=%d)", replicates, k, seed)
    return fold_sets


def audit(plan: SplitPlan, videos: Sequence[VideoRecord]) -> LeakageReport:
    by_id = index_by_id(videos)
    referenced = (
        set(plan.train_videos)
        | set(plan.val_videos)
        | set(plan.test_videos)
        | set(plan.svr_train_videos or ())
    )
    missing = sorted(referenced - set(by_id))
    if missing:
        raise IntegrityError(f"plan references unknown videos: {missing[:5]}")
    for vid, idx in (*plan.train_frames, *plan.val_frames):
        if vid not in by_id:
            raise IntegrityError(f"frame ({vid}, {idx}) belongs to an unknown video")
        if not 0 <= idx < by_id[vid].n_frames:
            raise IntegrityError(f"frame ({vid}, {idx}) does not exist")

    train = set(plan.train_videos) | {v for v, _ in plan.train_frames}
    val = set(plan.val_videos) | {v for v, _ in plan.val_frames}
    leaky = len(train & val)
    tainted = len(set(plan.test_videos) & (train | val))
    return LeakageReport(
        leaky_videos=leaky,
        tainted_test_videos=tainted,
        test_size=len(plan.test_videos),
        ft_leaky=leaky > 0,
        test_tainted=tainted > 0,
        declared_ft_leaky=plan.ft_leaky,
        declared_test_tainted=plan.test_tainted,
    )


def save_plan(plan: SplitPlan, path: str | Path) -> None:
    Path(path).write_text(plan.model_dump_json(indent=2), encoding="utf-8")


def load_plan(path: str | Path) -> SplitPlan:
    return SplitPlan.model_validate_json(Path(path).read_text(encoding="utf-8"))
