from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from leaklab.dataset import GeneratorConfig, VideoRecord, generate
from leaklab.errors import DomainError, IntegrityError
from leaklab.splitter import (
    audit,
    derive_seed,
    load_plan,
    make_tainted_folds,
    save_plan,
    split_clean,
    split_ft_leaky,
)


def _videos(n: int, frames: int = 1, dim: int = 1) -> list[VideoRecord]:
    rng = np.random.default_rng(n)
    return [
        VideoRecord(f"v{i:05d}", float(rng.uniform(1, 5)), np.full((frames, dim), float(i)))
        for i in range(n)
    ]


def test_full_scale_video_split():
    plan = split_clean(_videos(1200), frame_fraction=1.0, seed=1)
    assert len(plan.test_videos) == 240
    assert len(plan.fine_tune_videos) == 960


def test_ten_videos_fill_every_role_once():
    plan = split_clean(_videos(10), frame_fraction=1.0, train_val_ratio=(3, 1), seed=4)
    assert (len(plan.train_videos), len(plan.val_videos), len(plan.test_videos)) == (6, 2, 2)
    roles = [set(plan.train_videos), set(plan.val_videos), set(plan.test_videos)]
    assert sum(len(r) for r in roles) == len(set().union(*roles)) == 10


def test_twenty_percent_of_240_frames_is_48():
    plan = split_clean(_videos(5, frames=240), frame_fraction=0.2, seed=0)
    per_video: dict[str, int] = {}
    for vid, _ in plan.train_frames + plan.val_frames:
        per_video[vid] = per_video.get(vid, 0) + 1
    assert set(per_video.values()) == {48}


def test_strided_sampling_is_evenly_spaced():
    plan = split_clean(_videos(5, frames=10), frame_fraction=0.5, seed=0, frame_sampling="strided")
    vid = plan.train_videos[0]
    assert [i for v, i in plan.train_frames if v == vid] == [0, 2, 4, 7, 9]


def test_too_few_videos():
    with pytest.raises(DomainError):
        split_clean(_videos(4), frame_fraction=1.0)


@pytest.mark.parametrize("fraction", [0.0, 1.5])
def test_frame_fraction_range(fraction):
    with pytest.raises(DomainError):
        split_clean(_videos(10), frame_fraction=fraction)


@given(seed=st.integers(min_value=0, max_value=2**32 - 1))
def test_clean_roles_are_disjoint(seed):
    videos = _videos(30, frames=5)
    plan = split_clean(videos, frame_fraction=0.4, seed=seed)
    train, val, test = set(plan.train_videos), set(plan.val_videos), set(plan.test_videos)
    assert not (train & val or train & test or val & test)
    assert {v for v, _ in plan.train_frames} <= train
    assert {v for v, _ in plan.val_frames} <= val
    report = audit(plan, videos)
    assert (report.leaky_videos, report.tainted_test_videos) == (0, 0)
    assert report.consistent


def test_split_hygiene_over_100_seeds():
    videos = generate(GeneratorConfig(n_videos=60, frames_per_video=40, feature_dim=4, seed=0))
    for seed in range(100):
        clean = audit(split_clean(videos, 0.2, (3, 1), seed), videos)
        assert not clean.ft_leaky and not clean.test_tainted and clean.consistent
        leaky = audit(split_ft_leaky(videos, 0.2, (3, 1), seed), videos)
        assert leaky.leaky_videos >= 1 and leaky.consistent


def test_leaky_split_shares_the_clean_video_split():
    videos = _videos(40, frames=10)
    clean = split_clean(videos, 0.2, (3, 1), seed=8)
    leaky = split_ft_leaky(videos, 0.2, (3, 1), seed=8)
    assert clean.test_videos == leaky.test_videos
    assert set(clean.fine_tune_videos) == set(leaky.fine_tune_videos)
    assert sorted(clean.train_frames + clean.val_frames) == sorted(leaky.train_frames + leaky.val_frames)
    assert leaky.ft_leaky and not clean.ft_leaky


def test_frame_level_split_proportions():
    plan = split_ft_leaky(_videos(5, frames=240), 0.2, (3, 1), seed=2)
    assert len(plan.train_frames) == 144 and len(plan.val_frames) == 48


def test_single_sampled_frame_cannot_leak():
    videos = _videos(20, frames=4)
    plan = split_ft_leaky(videos, frame_fraction=0.25, seed=3)
    assert audit(plan, videos).leaky_videos == 0


def test_tainted_overlap_is_eighty_percent():
    videos = _videos(300)
    ft_plan = split_clean(videos, frame_fraction=1.0, seed=0)
    fold_sets = make_tainted_folds(videos, 5, 20, ft_plan, seed=7)
    overlaps = [f for fs in fold_sets for f in fs.overlap_fractions]
    assert len(overlaps) == 100
    assert np.mean(overlaps) == pytest.approx(0.80, abs=0.03)
    for fs in fold_sets:
        for fold in fs.folds:
            assert fold.test_tainted
            report = audit(fold, videos)
            assert report.consistent
            assert report.tainted_test_videos == pytest.approx(0.8 * len(fold.test_videos), abs=15)


def test_fold_tests_partition_all_videos():
    videos = _videos(23)
    ft_plan = split_clean(videos, frame_fraction=1.0, seed=0)
    (fold_set,) = make_tainted_folds(videos, 4, 1, ft_plan, seed=1)
    tests = [set(f.test_videos) for f in fold_set.folds]
    assert set().union(*tests) == {v.video_id for v in videos}
    assert sum(len(t) for t in tests) == 23
    for fold in fold_set.folds:
        assert set(fold.svr_train_videos) == {v.video_id for v in videos} - set(fold.test_videos)


def test_leave_one_out_taints_only_fine_tuning_videos():
    videos = _videos(10)
    ft_plan = split_clean(videos, frame_fraction=1.0, seed=0)
    (fold_set,) = make_tainted_folds(videos, 10, 1, ft_plan, seed=1)
    seen = set(ft_plan.fine_tune_videos)
    for fold in fold_set.folds:
        (vid,) = fold.test_videos
        assert fold.test_tainted == (vid in seen)


def test_replicate_fold_seeds_are_distinct():
    videos = _videos(50)
    ft_plan = split_clean(videos, frame_fraction=1.0, seed=0)
    fold_sets = make_tainted_folds(videos, 5, 10, ft_plan, seed=99)
    seeds = [f.seed for fs in fold_sets for f in fs.folds]
    assert len(seeds) == 50 and len(set(seeds)) == 50
    assert [fs.replicate_index for fs in fold_sets] == list(range(10))


def test_more_folds_than_videos():
    videos = _videos(6)
    ft_plan = split_clean(videos, frame_fraction=1.0, seed=0)
    with pytest.raises(DomainError):
        make_tainted_folds(videos, 7, 1, ft_plan, seed=0)


def test_audit_rejects_dangling_frames():
    videos = _videos(10, frames=2)
    plan = split_clean(videos, frame_fraction=1.0, seed=0)
    broken = plan.model_copy(update={"train_frames": plan.train_frames + ((plan.train_videos[0], 5),)})
    with pytest.raises(IntegrityError):
        audit(broken, videos)
    with pytest.raises(IntegrityError):
        audit(plan, videos[:3])


def test_audit_flags_a_lying_plan():
    videos = _videos(10, frames=2)
    plan = split_clean(videos, frame_fraction=1.0, seed=0)
    liar = plan.model_copy(update={"test_tainted": True})
    assert not audit(liar, videos).consistent


def test_plan_json_file(tmp_path):
    videos = _videos(12, frames=3)
    plan = split_ft_leaky(videos, frame_fraction=1.0, seed=5)
    save_plan(plan, tmp_path / "plan.json")
    assert load_plan(tmp_path / "plan.json") == plan


def test_derive_seed_is_stable_and_keyed():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert len({derive_seed(1, 2, k) for k in range(100)}) == 100
    assert derive_seed(1, 2) != derive_seed(2, 2)
