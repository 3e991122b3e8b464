"""Direct MOS regression: the extractor body with a fully connected regression head.

Frames pass through the frozen projection and the extractor's hidden layer (the trainable
body), then through ReLU+dropout layers to a single output. A video is scored by averaging the
per-frame outputs over all of its frames.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .constants import (
    MOS_MAX,
    MOS_MIN,
    PUBLISHED_HEAD_DROPOUT,
    PUBLISHED_HEAD_EPOCHS,
    PUBLISHED_HEAD_LAYERS,
    PUBLISHED_HEAD_LR_MULTIPLIER,
    PUBLISHED_LR_DECAY_PER_EPOCH,
)
from .dataset import VideoRecord, index_by_id
from .errors import DomainError, TrainingDivergedError
from .extractor import FORMAT_VERSION, Extractor, embed, momentum_step, read_weight_file
from .splitter import SplitPlan

log = logging.getLogger(__name__)


class RegressionHeadConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    layer_sizes: tuple[int, ...] = Field(PUBLISHED_HEAD_LAYERS, min_length=1)
    # Desk-scale factor applied to layer_sizes
    layer_scale: float = Field(1.0 / 16.0, gt=0.0, le=1.0)
    dropout_rate: float = Field(PUBLISHED_HEAD_DROPOUT, ge=0.0, lt=1.0)
    head_lr_multiplier: float = Field(PUBLISHED_HEAD_LR_MULTIPLIER, gt=0.0)
    lr_decay_per_epoch: float = Field(PUBLISHED_LR_DECAY_PER_EPOCH, gt=0.0, le=1.0)
    epochs: int = Field(PUBLISHED_HEAD_EPOCHS, ge=0)
    # Body rate; the published 1e-4 suits a large pre-trained network, not this surrogate
    learning_rate: float = Field(1e-3, ge=0.0, allow_inf_nan=False)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    minibatch_size: int = Field(32, ge=1)
    seed: int = Field(0, ge=0)

    @property
    def scaled_sizes(self) -> tuple[int, ...]:
        return tuple(max(1, round(s * self.layer_scale)) for s in self.layer_sizes)


def epoch_learning_rate(config: RegressionHeadConfig, epoch: int) -> float:
    """Body learning rate during `epoch` (0-based): alpha * decay**epoch."""
    return config.learning_rate * config.lr_decay_per_epoch**epoch


@dataclass(frozen=True)
class FrameScoreModel:
    embed_weights: np.ndarray = field(repr=False)
    # (weights, bias) per layer: body first, then the head layers, then the scalar output
    layers: tuple[tuple[np.ndarray, np.ndarray], ...] = field(repr=False)
    dropout_rate: float = 0.0

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def params(self) -> list[np.ndarray]:
        return [np.array(a) for w, b in self.layers for a in (w, b)]

    def with_params(self, flat: Sequence[np.ndarray]) -> "FrameScoreModel":
        pairs = tuple((np.array(flat[2 * k]), np.array(flat[2 * k + 1])) for k in range(self.n_layers))
        return FrameScoreModel(self.embed_weights, pairs, self.dropout_rate)


class EpochPoint(BaseModel):
    epoch: int
    learning_rate: float
    train_loss: float
    val_loss: float | None = None


class RegressionTrace(BaseModel):
    epochs: list[EpochPoint] = Field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["iteration", "train_loss", "train_acc", "val_loss", "val_acc", "test_loss", "test_acc"]
        )
        for p in self.epochs:
            val = "" if p.val_loss is None else repr(p.val_loss)
            writer.writerow([p.epoch, repr(p.train_loss), "", val, "", "", ""])
        return buf.getvalue()


def init_regression_model(
    extractor: Extractor, config: RegressionHeadConfig, frames: np.ndarray | None = None
) -> FrameScoreModel:
    """Body copied from the extractor's hidden layer; head layers He-uniform initialised.

    With `frames`, each ReLU layer's bias is set to minus the median of its pre-activations over
    those frames, so every unit starts active on half of them.
    """
    rng = np.random.default_rng(config.seed)
    layers: list[tuple[np.ndarray, np.ndarray]] = [
        (np.array(extractor.hidden_weights), np.array(extractor.hidden_bias))
    ]
    h = None
    if frames is not None:
        h = np.tanh(embed(extractor, frames) @ extractor.hidden_weights + extractor.hidden_bias)
    fan_in = extractor.feature_dim
    for size in config.scaled_sizes:
        lim = math.sqrt(6.0 / fan_in)
        w = rng.uniform(-lim, lim, size=(fan_in, size))
        b = np.zeros(size)
        if h is not None:
            z = h @ w
            b = -np.median(z, axis=0)
            h = np.maximum(z + b, 0.0)
        layers.append((w, b))
        fan_in = size
    lim = math.sqrt(6.0 / (fan_in + 1))
    mid = (MOS_MIN + MOS_MAX) / 2.0
    layers.append((rng.uniform(-lim, lim, size=(fan_in, 1)), np.full(1, mid)))
    return FrameScoreModel(np.array(extractor.embed_weights), tuple(layers), config.dropout_rate)


def _forward(
    layers: Sequence[tuple[np.ndarray, np.ndarray]],
    e: np.ndarray,
    dropout: float,
    rng: np.random.Generator | None,
) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray | None]]:
    """Returns outputs, per-layer activations (inputs to each layer) and dropout masks."""
    acts = [e]
    masks: list[np.ndarray | None] = []
    w, b = layers[0]
    h = np.tanh(e @ w + b)
    for w, b in layers[1:-1]:
        acts.append(h)
        h = np.maximum(h @ w + b, 0.0)
        mask = None
        if rng is not None and dropout > 0.0:
            mask = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
            h = h * mask
        masks.append(mask)
    acts.append(h)
    w, b = layers[-1]
    return (h @ w + b)[:, 0], acts, masks


def _loss_and_grads(
    layers: Sequence[tuple[np.ndarray, np.ndarray]],
    e: np.ndarray,
    targets: np.ndarray,
    dropout: float,
    rng: np.random.Generator | None,
) -> tuple[float, list[np.ndarray]]:
    n = e.shape[0]
    out, acts, masks = _forward(layers, e, dropout, rng)
    resid = out - targets
    loss = float(0.5 * np.mean(resid**2))

    grads: list[np.ndarray] = [np.empty(0)] * (2 * len(layers))
    delta = (resid / n)[:, None]
    last = len(layers) - 1
    for k in range(last, -1, -1):
        w, _ = layers[k]
        a_in = acts[k]
        grads[2 * k] = a_in.T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k == 0:
            break
        d_a = delta @ w.T
        h_out = acts[k]
        if k == 1:
            # input to layer 1 is the tanh body output
            delta = d_a * (1.0 - h_out**2)
        else:
            mask = masks[k - 2]
            if mask is not None:
                d_a = d_a * mask
            delta = d_a * (h_out > 0.0)
    return loss, grads


def loss_and_gradients(
    model: FrameScoreModel, frames: np.ndarray, targets: np.ndarray
) -> tuple[float, list[np.ndarray]]:
    """Half mean squared error and its gradients, dropout off; gradients follow `params()` order."""
    e = np.tanh(np.asarray(frames, dtype=np.float64) @ model.embed_weights)
    return _loss_and_grads(model.layers, e, np.asarray(targets, dtype=np.float64), 0.0, None)


def predict_frames(model: FrameScoreModel, frames: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if x.shape[1] != model.embed_weights.shape[0]:
        raise DomainError(f"frames have dimension {x.shape[1]}, model expects {model.embed_weights.shape[0]}")
    out, _, _ = _forward(model.layers, np.tanh(x @ model.embed_weights), 0.0, None)
    return out


def predict_video(model: FrameScoreModel, video: VideoRecord | np.ndarray) -> float:
    """Average frame score over every frame of the video."""
    frames = video.features if isinstance(video, VideoRecord) else np.asarray(video)
    if frames.size == 0:
        raise DomainError("predict_video needs at least one frame")
    # sorted so the mean does not depend on frame order
    return float(np.sort(predict_frames(model, frames)).mean())


def _gather(by_id: dict[str, VideoRecord], refs: Sequence[tuple[str, int]]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([by_id[v].features[i] for v, i in refs])
    y = np.array([by_id[v].mos for v, _ in refs], dtype=np.float64)
    return x, y


def train_regression(
    extractor: Extractor,
    plan: SplitPlan,
    videos: Sequence[VideoRecord],
    config: RegressionHeadConfig,
) -> tuple[FrameScoreModel, RegressionTrace]:
    """Train body and head on the plan's sampled training frames; the final epoch is returned."""
    if plan.ft_leaky or plan.test_tainted:
        raise DomainError("end-to-end regression is only evaluated under a clean split plan")
    if not plan.train_frames:
        raise DomainError("end-to-end regression needs a non-empty training frame set")
    by_id = index_by_id(videos)
    x_train, y_train = _gather(by_id, plan.train_frames)
    e_train = embed(extractor, x_train)
    e_val = y_val = None
    if plan.val_frames:
        x_val, y_val = _gather(by_id, plan.val_frames)
        e_val = embed(extractor, x_val)

    model = init_regression_model(extractor, config, frames=x_train)
    params = [list(pair) for pair in model.layers]
    velocity = [[np.zeros_like(w), np.zeros_like(b)] for w, b in params]
    rng = np.random.default_rng(config.seed)
    trace = RegressionTrace()
    iteration = 0

    for epoch in range(config.epochs):
        lr = epoch_learning_rate(config, epoch)
        order = rng.permutation(len(y_train))
        batch_losses: list[float] = []
        for start in range(0, len(order), config.minibatch_size):
            batch = order[start : start + config.minibatch_size]
            iteration += 1
            layers = [(w, b) for w, b in params]
            loss, grads = _loss_and_grads(layers, e_train[batch], y_train[batch], config.dropout_rate, rng)
            if not math.isfinite(loss):
                raise TrainingDivergedError(iteration, loss)
            batch_losses.append(loss * len(batch))
            for k in range(len(params)):
                rate = lr if k == 0 else lr * config.head_lr_multiplier
                for slot in (0, 1):
                    velocity[k][slot] = momentum_step(
                        velocity[k][slot], grads[2 * k + slot], config.momentum, rate
                    )
                    params[k][slot] = params[k][slot] + velocity[k][slot]
        val_loss = None
        if e_val is not None:
            out, _, _ = _forward([(w, b) for w, b in params], e_val, 0.0, None)
            val_loss = float(0.5 * np.mean((out - y_val) ** 2))
        point = EpochPoint(
            epoch=epoch + 1,
            learning_rate=lr,
            train_loss=sum(batch_losses) / len(y_train),
            val_loss=val_loss,
        )
        trace.epochs.append(point)
        log.debug("epoch %d lr=%g train_loss=%.4f", point.epoch, lr, point.train_loss)

    trained = FrameScoreModel(model.embed_weights, tuple((w, b) for w, b in params), config.dropout_rate)
    log.info("end-to-end head trained for %d epochs", config.epochs)
    return trained, trace


class HeadFile(BaseModel):
    format_version: int = FORMAT_VERSION
    dropout_rate: float
    embed_weights: list[list[float]]
    layers: list[tuple[list[list[float]], list[float]]]


def save_regression_model(model: FrameScoreModel, path: str | Path) -> None:
    doc = HeadFile(
        dropout_rate=model.dropout_rate,
        embed_weights=model.embed_weights.tolist(),
        layers=[(w.tolist(), b.tolist()) for w, b in model.layers],
    )
    Path(path).write_text(doc.model_dump_json(), encoding="utf-8")


def load_regression_model(path: str | Path) -> FrameScoreModel:
    doc = read_weight_file(path, HeadFile)
    layers = tuple((np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64)) for w, b in doc.layers)
    return FrameScoreModel(np.asarray(doc.embed_weights, dtype=np.float64), layers, doc.dropout_rate)
