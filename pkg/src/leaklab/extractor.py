"""Surrogate frame classifier whose hidden activations serve as frame features.

Architecture: x -> tanh(x W_e) (frozen "pre-trained" body) -> tanh(. W_h + b_h) (features)
-> softmax(. W_o + b_o) over the five MOS classes. Only W_h, b_h, W_o, b_o are fine-tuned.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence, TypeVar

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .dataset import N_CLASSES, ClassLabel, VideoRecord, classify_mos, dominant_class_share, index_by_id
from .errors import DomainError, TrainingDivergedError
from .splitter import SplitPlan

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
TRAINABLE = ("hidden_weights", "hidden_bias", "head_weights", "head_bias")

_Doc = TypeVar("_Doc", bound=BaseModel)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Extractor:
    embed_weights: np.ndarray = field(repr=False)
    hidden_weights: np.ndarray = field(repr=False)
    hidden_bias: np.ndarray = field(repr=False)
    head_weights: np.ndarray = field(repr=False)
    head_bias: np.ndarray = field(repr=False)
    fine_tuned: bool = False

    def __post_init__(self) -> None:
        for name in ("embed_weights", *TRAINABLE):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        d, h = self.embed_weights.shape
        if self.hidden_weights.shape[0] != h or self.head_weights.shape != (self.feature_dim, N_CLASSES):
            raise DomainError("extractor layer shapes do not chain")
        if self.hidden_bias.shape != (self.feature_dim,) or self.head_bias.shape != (N_CLASSES,):
            raise DomainError("extractor bias shapes do not match their layers")

    @property
    def input_dim(self) -> int:
        return int(self.embed_weights.shape[0])

    @property
    def embed_dim(self) -> int:
        return int(self.embed_weights.shape[1])

    @property
    def feature_dim(self) -> int:
        return int(self.hidden_weights.shape[1])

    def params(self) -> dict[str, np.ndarray]:
        return {name: np.array(getattr(self, name)) for name in TRAINABLE}

    def with_params(self, params: dict[str, np.ndarray], fine_tuned: bool | None = None) -> "Extractor":
        return replace(
            self,
            **{name: params[name] for name in TRAINABLE},
            fine_tuned=self.fine_tuned if fine_tuned is None else fine_tuned,
        )


class ExtractorSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    embed_dim: int = Field(128, ge=1)
    feature_dim: int = Field(64, ge=1)
    seed: int = Field(0, ge=0)


class TrainConfig(BaseModel):
    """SGD-with-momentum fine-tuning settings.

    The defaults are desk-scale: the published learning rate (1e-4, see
    `constants.PUBLISHED_LEARNING_RATE`) is tuned for a large pre-trained network and barely moves
    a small one.
    """

    model_config = ConfigDict(extra="forbid")

    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    learning_rate: float = Field(0.05, ge=0.0, allow_inf_nan=False)
    minibatch_size: int = Field(32, ge=1)
    max_iterations: int = Field(1500, ge=1)
    # Frames consumed between validation passes
    validation_every: int = Field(320, ge=1)
    patience: int = Field(3, ge=0)
    lr_drop_factor: float = Field(1.0, gt=0.0, le=1.0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _validation_fits_run(self) -> "TrainConfig":
        budget = self.max_iterations * self.minibatch_size
        if self.validation_every > budget:
            raise ValueError(
                f"validation_every={self.validation_every} exceeds the run's {budget} frames"
            )
        return self


class TrainPoint(BaseModel):
    iteration: int
    loss: float
    accuracy: float


class ValidationPoint(BaseModel):
    iteration: int
    frames_seen: int
    learning_rate: float
    val_loss: float
    val_accuracy: float
    test_loss: float | None = None
    test_accuracy: float | None = None


class TrainTrace(BaseModel):
    train: list[TrainPoint] = Field(default_factory=list)
    validation: list[ValidationPoint] = Field(default_factory=list)
    selected_iteration: int = 0

    @property
    def selected_val_loss(self) -> float:
        for p in self.validation:
            if p.iteration == self.selected_iteration:
                return p.val_loss
        raise DomainError("trace has no validation point at the selected iteration")

    def to_csv(self) -> str:
        val_at = {p.iteration: p for p in self.validation}
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["iteration", "train_loss", "train_acc", "val_loss", "val_acc", "test_loss", "test_acc"]
        )
        train_at = {p.iteration: p for p in self.train}
        for it in sorted(set(train_at) | set(val_at)):
            t, v = train_at.get(it), val_at.get(it)
            writer.writerow(
                [
                    it,
                    _fmt(t.loss if t else None),
                    _fmt(t.accuracy if t else None),
                    _fmt(v.val_loss if v else None),
                    _fmt(v.val_accuracy if v else None),
                    _fmt(v.test_loss if v else None),
                    _fmt(v.test_accuracy if v else None),
                ]
            )
        return buf.getvalue()


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


class GapStatistics(BaseModel):
    clean_gap: float
    leaky_gap: float

    @property
    def difference(self) -> float:
        return self.leaky_gap - self.clean_gap


class ClassDistribution(BaseModel):
    counts: list[int]
    percentages: list[float]
    accuracy: float
    dominant_class_share: float

    @property
    def uplift(self) -> float:
        return self.accuracy - self.dominant_class_share


def init_extractor(input_dim: int, spec: ExtractorSpec | None = None) -> Extractor:
    """Seeded random body plus Xavier-uniform trainable layers (the off-the-shelf extractor)."""
    spec = spec or ExtractorSpec()
    rng = np.random.default_rng(spec.seed)
    h, f = spec.embed_dim, spec.feature_dim
    embed = rng.standard_normal((input_dim, h)) / math.sqrt(input_dim)
    lim_h = math.sqrt(6.0 / (h + f))
    lim_o = math.sqrt(6.0 / (f + N_CLASSES))
    return Extractor(
        embed_weights=embed,
        hidden_weights=rng.uniform(-lim_h, lim_h, size=(h, f)),
        hidden_bias=np.zeros(f),
        head_weights=rng.uniform(-lim_o, lim_o, size=(f, N_CLASSES)),
        head_bias=np.zeros(N_CLASSES),
    )


def _as_matrix(extractor: Extractor, frames: np.ndarray | Sequence) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        x = np.asarray(frames, dtype=np.float64)
    else:
        rows = [getattr(fr, "raw_features", fr) for fr in frames]
        x = np.asarray(rows, dtype=np.float64).reshape(len(rows), -1)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != extractor.input_dim:
        raise DomainError(f"frames have dimension {x.shape[1]}, extractor expects {extractor.input_dim}")
    return x


def embed(extractor: Extractor, frames: np.ndarray) -> np.ndarray:
    return np.tanh(_as_matrix(extractor, frames) @ extractor.embed_weights)


def _features_from_embedding(params: dict[str, np.ndarray] | Extractor, e: np.ndarray) -> np.ndarray:
    get = params.__getitem__ if isinstance(params, dict) else lambda k: getattr(params, k)
    return np.tanh(e @ get("hidden_weights") + get("hidden_bias"))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def extract_features(extractor: Extractor, frames: np.ndarray | Sequence) -> np.ndarray:
    """Hidden-layer activations, one row per frame."""
    return _features_from_embedding(extractor, embed(extractor, frames))


def predict_proba(extractor: Extractor, frames: np.ndarray | Sequence) -> np.ndarray:
    h = extract_features(extractor, frames)
    return softmax(h @ extractor.head_weights + extractor.head_bias)


def predict_classes(extractor: Extractor, frames: np.ndarray | Sequence) -> np.ndarray:
    return predict_proba(extractor, frames).argmax(axis=1)


def _loss_and_grads(
    params: dict[str, np.ndarray], e: np.ndarray, labels: np.ndarray
) -> tuple[float, float, dict[str, np.ndarray]]:
    n = e.shape[0]
    h = _features_from_embedding(params, e)
    probs = softmax(h @ params["head_weights"] + params["head_bias"])
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    accuracy = float((probs.argmax(axis=1) == labels).mean())

    d_logits = probs.copy()
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n
    d_h = (d_logits @ params["head_weights"].T) * (1.0 - h**2)
    grads = {
        "head_weights": h.T @ d_logits,
        "head_bias": d_logits.sum(axis=0),
        "hidden_weights": e.T @ d_h,
        "hidden_bias": d_h.sum(axis=0),
    }
    return loss, accuracy, grads


def loss_and_gradients(
    extractor: Extractor, frames: np.ndarray, labels: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy and its gradient with respect to every trainable array."""
    loss, _, grads = _loss_and_grads(extractor.params(), embed(extractor, frames), np.asarray(labels))
    return loss, grads


def momentum_step(velocity: np.ndarray, grad: np.ndarray, momentum: float, lr: float) -> np.ndarray:
    """v <- beta * v - alpha * grad."""
    return momentum * velocity - lr * grad


def _gather(
    by_id: dict[str, VideoRecord], refs: Sequence[tuple[str, int]]
) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([by_id[v].features[i] for v, i in refs])
    y = np.array([int(classify_mos(by_id[v].mos)) for v, _ in refs], dtype=np.int64)
    return x, y


def _evaluate(params: dict[str, np.ndarray], e: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    loss, acc, _ = _loss_and_grads(params, e, y)
    return loss, acc


def fine_tune(
    extractor: Extractor,
    plan: SplitPlan,
    videos: Sequence[VideoRecord],
    config: TrainConfig,
    *,
    monitor_videos: Sequence[str] | None = None,
) -> tuple[Extractor, TrainTrace]:
    """Fine-tune the trainable layers; returns the snapshot with the lowest validation loss.

    `monitor_videos` (normally the plan's test videos) are scored at every validation point for
    the training-curve report; they never influence selection.
    """
    if not plan.train_frames or not plan.val_frames:
        raise DomainError("fine-tuning needs non-empty train and validation frame sets")
    by_id = index_by_id(videos)
    x_train, y_train = _gather(by_id, plan.train_frames)
    x_val, y_val = _gather(by_id, plan.val_frames)
    e_train, e_val = embed(extractor, x_train), embed(extractor, x_val)
    e_mon = y_mon = None
    if monitor_videos:
        refs = [(v, i) for v in monitor_videos for i in range(by_id[v].n_frames)]
        x_mon, y_mon = _gather(by_id, refs)
        e_mon = embed(extractor, x_mon)

    params = extractor.params()
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.default_rng(config.seed)
    lr = config.learning_rate
    trace = TrainTrace()

    def validate(iteration: int, frames_seen: int) -> float:
        val_loss, val_acc = _evaluate(params, e_val, y_val)
        test_loss = test_acc = None
        if e_mon is not None:
            test_loss, test_acc = _evaluate(params, e_mon, y_mon)
        trace.validation.append(
            ValidationPoint(
                iteration=iteration,
                frames_seen=frames_seen,
                learning_rate=lr,
                val_loss=val_loss,
                val_accuracy=val_acc,
                test_loss=test_loss,
                test_accuracy=test_acc,
            )
        )
        log.debug("it=%d val_loss=%.4f val_acc=%.3f", iteration, val_loss, val_acc)
        return val_loss

    best_loss = validate(0, 0)
    best = {k: v.copy() for k, v in params.items()}
    trace.selected_iteration = 0
    stale = 0

    order = rng.permutation(len(y_train))
    cursor = 0
    frames_seen = 0
    next_validation = config.validation_every
    for it in range(1, config.max_iterations + 1):
        if cursor >= len(order):
            order = rng.permutation(len(y_train))
            cursor = 0
        batch = order[cursor : cursor + config.minibatch_size]
        cursor += config.minibatch_size

        loss, acc, grads = _loss_and_grads(params, e_train[batch], y_train[batch])
        if not math.isfinite(loss):
            raise TrainingDivergedError(it, loss)
        for name, g in grads.items():
            velocity[name] = momentum_step(velocity[name], g, config.momentum, lr)
            params[name] += velocity[name]
        trace.train.append(TrainPoint(iteration=it, loss=loss, accuracy=acc))

        frames_seen += len(batch)
        last = it == config.max_iterations
        if frames_seen < next_validation and not last:
            continue
        while next_validation <= frames_seen:
            next_validation += config.validation_every
        val_loss = validate(it, frames_seen)
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(it, val_loss)
        if val_loss < best_loss:
            best_loss = val_loss
            best = {k: v.copy() for k, v in params.items()}
            trace.selected_iteration = it
            stale = 0
        else:
            stale += 1
            if config.patience and stale >= config.patience and config.lr_drop_factor < 1.0:
                lr *= config.lr_drop_factor
                stale = 0
                log.debug("validation loss stalled; learning rate now %g", lr)

    log.info(
        "fine-tuned %d iterations, selected it=%d (val_loss=%.4f)",
        config.max_iterations,
        trace.selected_iteration,
        best_loss,
    )
    return extractor.with_params(best, fine_tuned=True), trace


def validation_gap(trace_clean: TrainTrace, trace_leaky: TrainTrace) -> GapStatistics:
    """Final validation accuracy minus final test accuracy for each trace."""

    def gap(trace: TrainTrace, name: str) -> float:
        if not trace.validation:
            raise DomainError(f"{name} trace has no validation points")
        last = trace.validation[-1]
        if last.test_accuracy is None:
            raise DomainError(f"{name} trace was recorded without a test monitor")
        return last.val_accuracy - last.test_accuracy

    return GapStatistics(clean_gap=gap(trace_clean, "clean"), leaky_gap=gap(trace_leaky, "leaky"))


def class_distribution(extractor: Extractor, test_videos: Sequence[VideoRecord]) -> ClassDistribution:
    """Histogram of per-video majority-vote predictions, with accuracy against true classes."""
    if not test_videos:
        raise DomainError("class_distribution needs at least one video")
    counts = np.zeros(N_CLASSES, dtype=np.int64)
    correct = 0
    for v in test_videos:
        votes = np.bincount(predict_classes(extractor, v.features), minlength=N_CLASSES)
        predicted = int(votes.argmax())
        counts[predicted] += 1
        correct += predicted == int(v.label)
    n = len(test_videos)
    return ClassDistribution(
        counts=[int(c) for c in counts],
        percentages=[100.0 * c / n for c in counts],
        accuracy=correct / n,
        dominant_class_share=dominant_class_share(test_videos),
    )


def extractor_hash(extractor: Extractor) -> str:
    digest = hashlib.sha256()
    digest.update(f"v{FORMAT_VERSION}:{extractor.fine_tuned}".encode())
    for name in ("embed_weights", *TRAINABLE):
        arr = np.ascontiguousarray(getattr(extractor, name), dtype=np.float64)
        digest.update(f"{name}{arr.shape}".encode())
        digest.update(arr.tobytes())
    return digest.hexdigest()


class WeightFileHeader(BaseModel):
    """Just enough of a weight file to check its version before parsing the rest."""

    model_config = ConfigDict(extra="ignore")

    format_version: int


class ExtractorFile(BaseModel):
    format_version: int = FORMAT_VERSION
    fine_tuned: bool
    embed_weights: list[list[float]]
    hidden_weights: list[list[float]]
    hidden_bias: list[float]
    head_weights: list[list[float]]
    head_bias: list[float]


def read_weight_file(path: str | Path, model: type[_Doc]) -> _Doc:
    """Parse a versioned weight file into `model`; version or shape problems are domain errors."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        version = WeightFileHeader.model_validate_json(text).format_version
    except ValidationError as e:
        raise DomainError(f"{path} is not a weight file: {e}") from None
    if version != FORMAT_VERSION:
        raise DomainError(f"unsupported weight file format_version {version!r}")
    try:
        return model.model_validate_json(text)
    except ValidationError as e:
        raise DomainError(f"malformed weight file {path}: {e}") from None


def save_extractor(extractor: Extractor, path: str | Path) -> None:
    doc = ExtractorFile(
        fine_tuned=extractor.fine_tuned,
        **{name: getattr(extractor, name).tolist() for name in ("embed_weights", *TRAINABLE)},
    )
    Path(path).write_text(doc.model_dump_json(), encoding="utf-8")


def load_extractor(path: str | Path) -> Extractor:
    doc = read_weight_file(path, ExtractorFile)
    return Extractor(
        fine_tuned=doc.fine_tuned,
        **{name: np.asarray(getattr(doc, name), dtype=np.float64) for name in ("embed_weights", *TRAINABLE)},
    )


__all__ = [
    "ClassLabel",
    "Extractor",
    "ExtractorSpec",
    "TrainConfig",
    "TrainTrace",
    "class_distribution",
    "extract_features",
    "fine_tune",
    "init_extractor",
    "validation_gap",
]
