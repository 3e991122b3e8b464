"""Synthetic and ingested video datasets.

A "video" here is a MOS value plus a matrix of per-frame raw feature vectors. The generator
encodes quality nonlinearly and adds a per-video nuisance vector so that video identity is
recoverable from any single frame, which is what makes frame-level leakage profitable.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .constants import CLASS_UPPER_BOUNDS, MANIFEST_HEADER, MOS_MAX, MOS_MIN
from .errors import DomainError, ManifestParseError

log = logging.getLogger(__name__)


class ClassLabel(IntEnum):
    VeryGood = 0
    Good = 1
    Mediocre = 2
    Poor = 3
    VeryPoor = 4


N_CLASSES = len(ClassLabel)


@dataclass(frozen=True)
class FrameSample:
    video_id: str
    frame_index: int
    raw_features: np.ndarray


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    mos: float
    features: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if not self.video_id:
            raise DomainError("video_id must be non-empty")
        _check_mos(self.mos, context=f"video {self.video_id}")
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise DomainError(f"video {self.video_id}: frames must be a non-empty n x D matrix")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)

    @property
    def n_frames(self) -> int:
        return int(self.features.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def label(self) -> ClassLabel:
        return classify_mos(self.mos)

    @property
    def frames(self) -> list[FrameSample]:
        return [FrameSample(self.video_id, i, row) for i, row in enumerate(self.features)]


class GeneratorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_videos: int = Field(300, ge=1)
    frames_per_video: int = Field(40, ge=1)
    feature_dim: int = Field(32, ge=1)
    # Calibrated so Clean lands mid-range on the default config
    quality_signal_strength: float = Field(0.5, ge=0.0, allow_inf_nan=False)
    video_nuisance_strength: float = Field(1.0, ge=0.0, allow_inf_nan=False)
    frame_noise_strength: float = Field(0.5, ge=0.0, allow_inf_nan=False)
    seed: int = Field(0, ge=0, lt=2**64)


def _check_mos(mos: float, context: str) -> None:
    if not math.isfinite(mos) or mos < MOS_MIN or mos > MOS_MAX:
        raise DomainError(f"{context}: mos {mos!r} outside [{MOS_MIN}, {MOS_MAX}]")


def classify_mos(mos: float) -> ClassLabel:
    """Map a MOS to its interval class; VeryPoor is closed at 1.0 so the scale is covered."""
    _check_mos(float(mos), context="classify_mos")
    if mos >= CLASS_UPPER_BOUNDS[3]:
        return ClassLabel.VeryGood
    if mos > CLASS_UPPER_BOUNDS[2]:
        return ClassLabel.Good
    if mos > CLASS_UPPER_BOUNDS[1]:
        return ClassLabel.Mediocre
    if mos > CLASS_UPPER_BOUNDS[0]:
        return ClassLabel.Poor
    return ClassLabel.VeryPoor


def quality_embedding(q: np.ndarray | float, dim: int) -> np.ndarray:
    """Component k (1-based) is sin(k*q/5) + (q/5)**((k mod 3) + 1)."""
    q = np.asarray(q, dtype=np.float64)
    k = np.arange(1, dim + 1, dtype=np.float64)
    powers = (np.arange(1, dim + 1) % 3) + 1
    qq = q[..., None]
    return np.sin(k * qq / 5.0) + (qq / 5.0) ** powers


def generate(config: GeneratorConfig) -> list[VideoRecord]:
    rng = np.random.default_rng(config.seed)
    n, f, d = config.n_videos, config.frames_per_video, config.feature_dim
    qualities = rng.uniform(MOS_MIN, MOS_MAX, size=n)
    nuisance = rng.standard_normal((n, d))
    noise = rng.standard_normal((n, f, d))

    signal = quality_embedding(qualities, d)
    raw = (
        config.quality_signal_strength * signal[:, None, :]
        + config.video_nuisance_strength * nuisance[:, None, :]
        + config.frame_noise_strength * noise
    )
    videos = [
        VideoRecord(video_id=f"v{i:05d}", mos=float(qualities[i]), features=raw[i])
        for i in range(n)
    ]
    log.debug("generated %d videos x %d frames (D=%d, seed=%d)", n, f, d, config.seed)
    return videos


def class_histogram(videos: Iterable[VideoRecord]) -> np.ndarray:
    """Counts per class, indexed by ClassLabel value."""
    counts = np.zeros(N_CLASSES, dtype=np.int64)
    for v in videos:
        counts[int(v.label)] += 1
    return counts


def dataset_fingerprint(videos: Sequence[VideoRecord]) -> str:
    """SHA-256 over ids, MOS values and frame bytes, in the given order."""
    digest = hashlib.sha256()
    for v in videos:
        digest.update(f"{v.video_id}\x00{v.mos!r}\x00{v.features.shape}".encode())
        digest.update(np.ascontiguousarray(v.features, dtype=np.float64).tobytes())
    return digest.hexdigest()


def dominant_class_share(videos: Sequence[VideoRecord]) -> float:
    if not videos:
        raise DomainError("dominant_class_share needs at least one video")
    counts = Counter(classify_mos(v.mos) for v in videos)
    return max(counts.values()) / len(videos)


def _load_frame_matrix(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        return np.load(path, allow_pickle=False)
    return np.loadtxt(path, delimiter=",", ndmin=2)


def ingest_manifest(path: str | Path) -> list[VideoRecord]:
    """Read `video_id,mos,frame_file` rows; rows sharing a video_id are concatenated in order."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ManifestParseError(f"not UTF-8 text: {e.reason}", line=1) from None
    if not text.strip():
        log.warning("manifest %s is empty; no videos ingested", path)
        return []

    reader = csv.reader(text.splitlines())
    header = next(reader)
    if tuple(h.strip() for h in header) != MANIFEST_HEADER:
        raise ManifestParseError(f"expected header {','.join(MANIFEST_HEADER)}", line=1)

    order: list[str] = []
    mos_by_id: dict[str, float] = {}
    chunks: dict[str, list[np.ndarray]] = {}
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise ManifestParseError(f"expected 3 columns, got {len(row)}", line=line_no)
        video_id, mos_text, frame_file = (c.strip() for c in row)
        if not video_id or not frame_file:
            raise ManifestParseError("empty video_id or frame_file", line=line_no)
        try:
            mos = float(mos_text)
        except ValueError:
            raise ManifestParseError(f"mos {mos_text!r} is not a number", line=line_no) from None
        _check_mos(mos, context=f"line {line_no}")
        if video_id in mos_by_id and mos_by_id[video_id] != mos:
            raise ManifestParseError(f"video {video_id} repeats with a different mos", line=line_no)

        frame_path = Path(frame_file)
        if not frame_path.is_absolute():
            frame_path = path.parent / frame_path
        try:
            matrix = _load_frame_matrix(frame_path)
        except (OSError, ValueError) as e:
            raise ManifestParseError(f"cannot read frames from {frame_file}: {e}", line=line_no)
        if matrix.ndim != 2 or matrix.shape[0] == 0:
            raise ManifestParseError(f"{frame_file} is not a non-empty frames x D matrix", line=line_no)

        if video_id not in mos_by_id:
            order.append(video_id)
            mos_by_id[video_id] = mos
            chunks[video_id] = []
        chunks[video_id].append(matrix)

    if not order:
        log.warning("manifest %s has a header but no rows; no videos ingested", path)
        return []
    videos = [VideoRecord(vid, mos_by_id[vid], np.vstack(chunks[vid])) for vid in order]
    dims = {v.feature_dim for v in videos}
    if len(dims) > 1:
        raise DomainError(f"manifest {path} mixes feature dimensions {sorted(dims)}")
    log.info("ingested %d videos from %s", len(videos), path)
    return videos


def write_dataset(videos: Sequence[VideoRecord], out_dir: str | Path) -> Path:
    """Write the manifest layout: manifest.csv plus frames/<video_id>.npy. Returns the manifest path."""
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.csv"
    with manifest.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for v in videos:
            rel = Path("frames") / f"{v.video_id}.npy"
            np.save(out_dir / rel, v.features, allow_pickle=False)
            writer.writerow([v.video_id, repr(v.mos), rel.as_posix()])
    log.info("wrote %d videos to %s", len(videos), out_dir)
    return manifest


def index_by_id(videos: Iterable[VideoRecord]) -> dict[str, VideoRecord]:
    out: dict[str, VideoRecord] = {}
    for v in videos:
        if v.video_id in out:
            raise DomainError(f"duplicate video_id {v.video_id}")
        out[v.video_id] = v
    return out
