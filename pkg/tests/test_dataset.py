from __future__ import annotations

import logging

import numpy as np
import pytest

from leaklab.dataset import (
    ClassLabel,
    GeneratorConfig,
    VideoRecord,
    class_histogram,
    classify_mos,
    dataset_fingerprint,
    dominant_class_share,
    generate,
    ingest_manifest,
    quality_embedding,
    write_dataset,
)
from leaklab.errors import DomainError, ManifestParseError


@pytest.mark.parametrize(
    "mos, expected",
    [
        (4.2, ClassLabel.VeryGood),
        (5.0, ClassLabel.VeryGood),
        (3.4, ClassLabel.Mediocre),
        (3.41, ClassLabel.Good),
        (2.6, ClassLabel.Poor),
        (1.8, ClassLabel.VeryPoor),
        (1.0, ClassLabel.VeryPoor),
    ],
)
def test_classify_mos_interval_edges(mos, expected):
    assert classify_mos(mos) is expected


@pytest.mark.parametrize("mos", [0.99, 5.01, float("nan")])
def test_classify_mos_rejects_out_of_range(mos):
    with pytest.raises(DomainError, match="outside"):
        classify_mos(mos)


def test_classify_mos_is_monotone_over_scale():
    grid = np.linspace(1.0, 5.0, 401)
    labels = [int(classify_mos(m)) for m in grid]
    assert labels == sorted(labels, reverse=True)
    assert set(labels) == {0, 1, 2, 3, 4}


def test_generate_is_deterministic():
    cfg = GeneratorConfig(n_videos=20, frames_per_video=5, feature_dim=6, seed=42)
    a, b = generate(cfg), generate(cfg)
    assert [v.video_id for v in a] == [v.video_id for v in b]
    for x, y in zip(a, b):
        assert x.mos == y.mos
        assert x.features.tobytes() == y.features.tobytes()


def test_noise_free_frames_equal_scaled_embedding():
    cfg = GeneratorConfig(
        n_videos=5, frames_per_video=4, feature_dim=7, seed=1,
        quality_signal_strength=2.0, video_nuisance_strength=0.0, frame_noise_strength=0.0,
    )
    for v in generate(cfg):
        expected = 2.0 * quality_embedding(v.mos, 7)
        np.testing.assert_allclose(v.features, np.tile(expected, (4, 1)))


def test_quality_embedding_components():
    q = 2.5
    g = quality_embedding(q, 4)
    k = np.arange(1, 5)
    np.testing.assert_allclose(g, np.sin(k * q / 5) + (q / 5) ** ((k % 3) + 1))


def test_frames_cluster_by_video():
    videos = generate(GeneratorConfig(n_videos=30, frames_per_video=6, feature_dim=16, seed=9))

    def unit(m):
        return m / np.linalg.norm(m, axis=1, keepdims=True)

    within, between = [], []
    for i, v in enumerate(videos):
        u = unit(v.features)
        sims = u @ u.T
        within.append(sims[np.triu_indices(len(u), 1)].mean())
        w = unit(videos[(i + 1) % len(videos)].features)
        between.append((u @ w.T).mean())
    assert np.mean(within) > np.mean(between)


def test_default_dataset_has_a_dominant_class():
    videos = generate(GeneratorConfig())
    counts = class_histogram(videos)
    assert counts.sum() == 300
    assert dominant_class_share(videos) == pytest.approx(counts.max() / 300)
    assert counts.max() > 0


def test_dominant_class_share_examples():
    frames = np.zeros((1, 2))
    same = [VideoRecord(f"v{i}", 3.0, frames) for i in range(4)]
    assert dominant_class_share(same) == 1.0
    mixed = [VideoRecord("a", 3.8, frames), VideoRecord("b", 4.0, frames), VideoRecord("c", 2.0, frames)]
    assert dominant_class_share(mixed) == pytest.approx(2 / 3)
    with pytest.raises(DomainError):
        dominant_class_share([])


def test_video_record_frames_carry_parent_id():
    v = VideoRecord("clip", 2.2, np.arange(6.0).reshape(3, 2))
    assert [f.video_id for f in v.frames] == ["clip"] * 3
    assert [f.frame_index for f in v.frames] == [0, 1, 2]
    assert v.label is ClassLabel.Poor


def _manifest(tmp_path, rows: list[str]) -> str:
    path = tmp_path / "manifest.csv"
    path.write_text("\n".join(["video_id,mos,frame_file", *rows]) + "\n", encoding="utf-8")
    return str(path)


def test_ingest_two_videos(tmp_path):
    np.save(tmp_path / "a.npy", np.ones((3, 4)))
    (tmp_path / "b.csv").write_text("1,2,3,4\n5,6,7,8\n", encoding="utf-8")
    videos = ingest_manifest(_manifest(tmp_path, ["a,1.3,a.npy", "b,4.9,b.csv"]))
    assert [v.label for v in videos] == [ClassLabel.VeryPoor, ClassLabel.VeryGood]
    assert videos[1].features.shape == (2, 4)


def test_ingest_rejects_mos_out_of_range(tmp_path):
    np.save(tmp_path / "a.npy", np.ones((3, 4)))
    with pytest.raises(DomainError, match="line 2"):
        ingest_manifest(_manifest(tmp_path, ["a,5.3,a.npy"]))


def test_ingest_reports_malformed_row_line(tmp_path):
    np.save(tmp_path / "a.npy", np.ones((3, 4)))
    with pytest.raises(ManifestParseError) as info:
        ingest_manifest(_manifest(tmp_path, ["a,2.0,a.npy", "b,3.0"]))
    assert info.value.line == 3


def test_ingest_empty_file_warns(tmp_path, caplog):
    path = tmp_path / "empty.csv"
    path.write_text("", encoding="utf-8")
    with caplog.at_level(logging.WARNING, logger="leaklab"):
        assert ingest_manifest(path) == []
    assert "empty" in caplog.text


def test_written_dataset_reads_back(tmp_path):
    videos = generate(GeneratorConfig(n_videos=6, frames_per_video=3, feature_dim=4, seed=2))
    back = ingest_manifest(write_dataset(videos, tmp_path))
    assert [v.video_id for v in back] == [v.video_id for v in videos]
    for a, b in zip(videos, back):
        assert a.mos == b.mos
        np.testing.assert_array_equal(a.features, b.features)


def test_header_only_manifest_warns(tmp_path, caplog):
    with caplog.at_level(logging.WARNING, logger="leaklab"):
        assert ingest_manifest(_manifest(tmp_path, [])) == []
    assert "no rows" in caplog.text


def test_non_utf8_manifest_is_a_parse_error(tmp_path):
    path = tmp_path / "manifest.csv"
    path.write_bytes(b"video_id,mos,frame_file\n\xff\xfe,3.0,a.npy\n")
    with pytest.raises(ManifestParseError) as info:
        ingest_manifest(path)
    assert info.value.line == 1


def test_fingerprint_tracks_content_not_ids():
    a = generate(GeneratorConfig(n_videos=5, frames_per_video=3, feature_dim=4, seed=1))
    b = generate(GeneratorConfig(n_videos=5, frames_per_video=3, feature_dim=4, seed=2))
    assert [v.video_id for v in a] == [v.video_id for v in b]
    assert dataset_fingerprint(a) != dataset_fingerprint(b)
    assert dataset_fingerprint(a) == dataset_fingerprint(list(a))
    moved = [VideoRecord(a[0].video_id, 2.0 if a[0].mos != 2.0 else 3.0, a[0].features), *a[1:]]
    assert dataset_fingerprint(moved) != dataset_fingerprint(a)
