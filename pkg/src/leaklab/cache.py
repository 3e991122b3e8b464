"""On-disk feature store keyed by (extractor hash, dataset fingerprint, video_id).

Layout, one directory per extractor and dataset:

    <root>/<hash[:16]>-<fingerprint[:16]>/index.json          hashes, video ids, row offsets
    <root>/<hash[:16]>-<fingerprint[:16]>/frames.npy          per-frame features in index order
    <root>/<hash[:16]>-<fingerprint[:16]>/pooled-<method>.npy one pooled row per video
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ValidationError

from .dataset import VideoRecord, dataset_fingerprint
from .errors import StaleCacheError
from .extractor import Extractor, extract_features, extractor_hash
from .pooling import PoolingMethod, pool_videos

log = logging.getLogger(__name__)

INDEX_FILE = "index.json"
FRAMES_FILE = "frames.npy"


class StoreIndex(BaseModel):
    extractor_hash: str
    dataset_fingerprint: str
    fine_tuned: bool
    feature_dim: int
    video_ids: list[str]
    offsets: list[int]


@dataclass(frozen=True)
class FeatureStore:
    extractor_hash: str
    video_ids: tuple[str, ...]
    offsets: np.ndarray = field(repr=False)
    frames: np.ndarray = field(repr=False)
    pooled: dict[PoolingMethod, np.ndarray] = field(repr=False)
    path: Path | None = None
    dataset_fingerprint: str = ""

    def frame_features(self, video_id: str) -> np.ndarray:
        k = self.video_ids.index(video_id)
        return self.frames[self.offsets[k] : self.offsets[k + 1]]

    def per_video(self) -> dict[str, np.ndarray]:
        return {vid: self.frames[self.offsets[k] : self.offsets[k + 1]] for k, vid in enumerate(self.video_ids)}

    def pooled_rows(self, video_ids: Sequence[str], method: PoolingMethod | str) -> np.ndarray:
        pos = {vid: k for k, vid in enumerate(self.video_ids)}
        return self.pooled[PoolingMethod(method)][[pos[v] for v in video_ids]]


def compute_features(extractor: Extractor, videos: Sequence[VideoRecord]) -> FeatureStore:
    """In-memory store for `videos` in their given order."""
    per_video = [extract_features(extractor, v.features) for v in videos]
    offsets = np.zeros(len(videos) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([f.shape[0] for f in per_video])
    frames = np.vstack(per_video) if per_video else np.zeros((0, extractor.feature_dim))
    return FeatureStore(
        extractor_hash=extractor_hash(extractor),
        video_ids=tuple(v.video_id for v in videos),
        offsets=offsets,
        frames=frames,
        pooled={m: pool_videos(per_video, m) for m in PoolingMethod} if per_video else {},
        dataset_fingerprint=dataset_fingerprint(videos),
    )


def _store_dir(root: Path, digest: str, fingerprint: str) -> Path:
    return root / f"{digest[:16]}-{fingerprint[:16]}"


def _load(directory: Path, digest: str, fingerprint: str, video_ids: tuple[str, ...]) -> FeatureStore:
    try:
        index = StoreIndex.model_validate_json((directory / INDEX_FILE).read_text(encoding="utf-8"))
    except ValidationError as e:
        raise StaleCacheError(f"cache index at {directory} is unreadable: {e}") from None
    if index.extractor_hash != digest:
        raise StaleCacheError(
            f"cache at {directory} belongs to extractor {index.extractor_hash[:16]}, not {digest[:16]}"
        )
    if index.dataset_fingerprint != fingerprint:
        raise StaleCacheError(
            f"cache at {directory} was built from dataset {index.dataset_fingerprint[:16]}, "
            f"not {fingerprint[:16]}"
        )
    if tuple(index.video_ids) != video_ids:
        raise StaleCacheError(f"cache at {directory} was built for a different set of videos")
    pooled = {m: np.load(directory / f"pooled-{m.value}.npy", allow_pickle=False) for m in PoolingMethod}
    return FeatureStore(
        extractor_hash=digest,
        video_ids=video_ids,
        offsets=np.asarray(index.offsets, dtype=np.int64),
        frames=np.load(directory / FRAMES_FILE, allow_pickle=False),
        pooled=pooled,
        path=directory,
        dataset_fingerprint=fingerprint,
    )


def cache_features(extractor: Extractor, videos: Sequence[VideoRecord], root: str | Path) -> FeatureStore:
    """Compute and persist features, or reuse a store written earlier for the same extractor and data."""
    digest = extractor_hash(extractor)
    fingerprint = dataset_fingerprint(videos)
    video_ids = tuple(v.video_id for v in videos)
    directory = _store_dir(Path(root), digest, fingerprint)
    if (directory / INDEX_FILE).exists():
        store = _load(directory, digest, fingerprint, video_ids)
        log.debug("reusing cached features at %s", directory)
        return store

    store = compute_features(extractor, videos)
    directory.mkdir(parents=True, exist_ok=True)
    np.save(directory / FRAMES_FILE, store.frames, allow_pickle=False)
    for method, rows in store.pooled.items():
        np.save(directory / f"pooled-{method.value}.npy", rows, allow_pickle=False)
    index = StoreIndex(
        extractor_hash=digest,
        dataset_fingerprint=fingerprint,
        fine_tuned=extractor.fine_tuned,
        feature_dim=extractor.feature_dim,
        video_ids=list(video_ids),
        offsets=store.offsets.tolist(),
    )
    # index last: its presence marks a complete store
    (directory / INDEX_FILE).write_text(index.model_dump_json(indent=2), encoding="utf-8")
    log.info("cached %d frame features for %d videos at %s", store.frames.shape[0], len(video_ids), directory)
    return FeatureStore(
        extractor_hash=digest,
        video_ids=video_ids,
        offsets=store.offsets,
        frames=store.frames,
        pooled=store.pooled,
        path=directory,
        dataset_fingerprint=fingerprint,
    )


def load_features(root: str | Path, extractor: Extractor, videos: Sequence[VideoRecord]) -> FeatureStore:
    """Load an existing store; raises StaleCacheError if none matches this extractor and dataset."""
    digest = extractor_hash(extractor)
    fingerprint = dataset_fingerprint(videos)
    directory = _store_dir(Path(root), digest, fingerprint)
    if not (directory / INDEX_FILE).exists():
        raise StaleCacheError(
            f"no cached features for extractor {digest[:16]} and dataset {fingerprint[:16]} under {root}"
        )
    return _load(directory, digest, fingerprint, tuple(v.video_id for v in videos))
