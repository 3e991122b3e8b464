"""Epsilon-SVR solved in the dual by sequential pairwise (SMO-style) optimisation.

The dual is written over 2n variables a = (alpha, alpha*) with signs z = (+1.., -1..):

    minimise   1/2 a^T Q a + p^T a,   Q_ij = z_i z_j K(x_i, x_j),   p = (eps - y, eps + y)
    subject to z^T a = 0,  0 <= a <= C

Working pairs are picked with second-order information (maximal violating pair for i, largest
objective decrease for j). The regression function is f(x) = sum_i beta_i K(x_i, x) + b with
beta = alpha - alpha*.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import DomainError

log = logging.getLogger(__name__)

TAU = 1e-12


class KernelSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["linear", "polynomial", "gaussian"] = "gaussian"
    degree: int = Field(3, ge=1)
    coef: float = 1.0
    # None resolves to 1/F when the model is fitted
    gamma: float | None = Field(None, gt=0.0)

    @field_validator("kind", mode="before")
    @classmethod
    def _rbf_is_gaussian(cls, v: object) -> object:
        if isinstance(v, str) and v.lower() == "rbf":
            return "gaussian"
        return v.lower() if isinstance(v, str) else v

    @property
    def label(self) -> str:
        if self.kind == "polynomial":
            return f"polynomial(d={self.degree},c={self.coef:g})"
        if self.kind == "gaussian":
            return "gaussian" if self.gamma is None else f"gaussian(g={self.gamma:g})"
        return "linear"

    def resolved(self, n_features: int) -> "KernelSpec":
        if self.kind == "gaussian" and self.gamma is None:
            return self.model_copy(update={"gamma": 1.0 / n_features})
        return self


class SvrConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    C: float = Field(1.0, gt=0.0, allow_inf_nan=False)
    epsilon: float = Field(0.1, ge=0.0, allow_inf_nan=False)
    tolerance: float = Field(1e-3, gt=0.0)
    # Each pass allows 2n pair updates
    max_passes: int = Field(1000, ge=1)


def gram_matrix(spec: KernelSpec, x: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = x if y is None else np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[1] != y.shape[1]:
        raise DomainError(f"kernel inputs differ in dimension ({x.shape[1]} vs {y.shape[1]})")
    if spec.kind == "linear":
        return x @ y.T
    if spec.kind == "polynomial":
        return (x @ y.T + spec.coef) ** spec.degree
    gamma = spec.gamma if spec.gamma is not None else 1.0 / x.shape[1]
    sq = (x**2).sum(axis=1)[:, None] + (y**2).sum(axis=1)[None, :] - 2.0 * (x @ y.T)
    k = np.exp(-gamma * np.maximum(sq, 0.0))
    if y is x:
        # exact symmetry and unit diagonal despite round-off in the expansion above
        k = 0.5 * (k + k.T)
        np.fill_diagonal(k, 1.0)
    return k


def kernel_eval(spec: KernelSpec, x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DomainError(f"kernel inputs differ in dimension ({x.size} vs {y.size})")
    if spec.kind == "linear":
        return float(x @ y)
    if spec.kind == "polynomial":
        return float((x @ y + spec.coef) ** spec.degree)
    gamma = spec.gamma if spec.gamma is not None else 1.0 / x.size
    d = x - y
    return float(np.exp(-gamma * (d @ d)))


@dataclass(frozen=True)
class RegressionModel:
    kernel: KernelSpec
    support_vectors: np.ndarray = field(repr=False)
    dual_coef: np.ndarray = field(repr=False)
    support_indices: np.ndarray = field(repr=False)
    bias: float
    feature_mean: np.ndarray = field(repr=False)
    feature_scale: np.ndarray = field(repr=False)
    C: float
    epsilon: float
    n_train: int
    iterations: int = 0
    converged: bool = True
    objective: float = 0.0
    # Largest training residual beyond the tube; > 0 means the data could not be fitted
    residual_excess: float = 0.0

    @property
    def n_features(self) -> int:
        return int(self.feature_mean.shape[0])

    def standardize(self, features: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if x.shape[1] != self.n_features:
            raise DomainError(f"features have dimension {x.shape[1]}, model expects {self.n_features}")
        return (x - self.feature_mean) / self.feature_scale

    def training_coefficients(self) -> np.ndarray:
        """beta for every training row, zeros for non-support rows."""
        beta = np.zeros(self.n_train)
        beta[self.support_indices] = self.dual_coef
        return beta

    def to_json(self) -> str:
        return ModelFile(
            kernel=self.kernel,
            support_vectors=self.support_vectors.tolist(),
            dual_coef=self.dual_coef.tolist(),
            support_indices=self.support_indices.tolist(),
            bias=self.bias,
            feature_mean=self.feature_mean.tolist(),
            feature_scale=self.feature_scale.tolist(),
            C=self.C,
            epsilon=self.epsilon,
            n_train=self.n_train,
            iterations=self.iterations,
            converged=self.converged,
            objective=self.objective,
            residual_excess=self.residual_excess,
        ).model_dump_json()

    @classmethod
    def from_json(cls, text: str) -> "RegressionModel":
        try:
            doc = ModelFile.model_validate_json(text)
        except ValidationError as e:
            raise DomainError(f"malformed SVR model file: {e}") from None
        n_features = len(doc.feature_mean)
        return cls(
            kernel=doc.kernel,
            support_vectors=np.asarray(doc.support_vectors, dtype=np.float64).reshape(-1, n_features),
            dual_coef=np.asarray(doc.dual_coef, dtype=np.float64),
            support_indices=np.asarray(doc.support_indices, dtype=np.int64),
            bias=doc.bias,
            feature_mean=np.asarray(doc.feature_mean, dtype=np.float64),
            feature_scale=np.asarray(doc.feature_scale, dtype=np.float64),
            C=doc.C,
            epsilon=doc.epsilon,
            n_train=doc.n_train,
            iterations=doc.iterations,
            converged=doc.converged,
            objective=doc.objective,
            residual_excess=doc.residual_excess,
        )


class ModelFile(BaseModel):
    kernel: KernelSpec
    support_vectors: list[list[float]]
    dual_coef: list[float]
    support_indices: list[int]
    bias: float
    feature_mean: list[float]
    feature_scale: list[float]
    C: float
    epsilon: float
    n_train: int
    iterations: int
    converged: bool
    objective: float
    residual_excess: float


def save_model(model: RegressionModel, path: str | Path) -> None:
    Path(path).write_text(model.to_json(), encoding="utf-8")


def load_model(path: str | Path) -> RegressionModel:
    return RegressionModel.from_json(Path(path).read_text(encoding="utf-8"))


def dual_objective(gram: np.ndarray, targets: np.ndarray, beta: np.ndarray, epsilon: float) -> float:
    """1/2 beta^T K beta - y^T beta + eps * |beta|_1 (the minimisation form of the dual)."""
    beta = np.asarray(beta, dtype=np.float64)
    return float(0.5 * beta @ gram @ beta - np.asarray(targets) @ beta + epsilon * np.abs(beta).sum())


def _violating_gap(a: np.ndarray, grad: np.ndarray, z: np.ndarray, C: float) -> float:
    up = ((z > 0) & (a < C)) | ((z < 0) & (a > 0))
    low = ((z > 0) & (a > 0)) | ((z < 0) & (a < C))
    if not up.any() or not low.any():
        return 0.0
    score = -z * grad
    return float(score[up].max() - score[low].min())


def _check_inputs(features: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).ravel()
    if x.ndim != 2:
        raise DomainError(f"features must be an n x F matrix, got shape {x.shape}")
    if x.shape[0] != y.shape[0]:
        raise DomainError(f"{x.shape[0]} feature rows but {y.shape[0]} targets")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise DomainError("features and targets must be finite")
    return x, y


def fit(
    features: np.ndarray,
    targets: np.ndarray,
    kernel: KernelSpec | None = None,
    config: SvrConfig | None = None,
) -> RegressionModel:
    """Fit an epsilon-SVR on z-scored features; the z-score statistics come from these rows only."""
    kernel = kernel or KernelSpec()
    config = config or SvrConfig()
    x, y = _check_inputs(features, targets)
    n = x.shape[0]
    if n < 2:
        raise DomainError(f"fit needs at least 2 training rows, got {n}")

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    zx = (x - mean) / scale
    spec = kernel.resolved(x.shape[1])
    gram = gram_matrix(spec, zx)

    C, eps, tol = config.C, config.epsilon, config.tolerance
    z = np.r_[np.ones(n), -np.ones(n)]
    a = np.zeros(2 * n)
    grad = np.r_[eps - y, eps + y]
    qd = np.r_[np.diag(gram), np.diag(gram)]
    idx = np.r_[np.arange(n), np.arange(n)]

    max_iter = config.max_passes * 2 * n
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        up = ((z > 0) & (a < C)) | ((z < 0) & (a > 0))
        low = ((z > 0) & (a > 0)) | ((z < 0) & (a < C))
        score = -z * grad
        i = int(np.where(up, score, -np.inf).argmax())
        g_max = score[i]
        g_min = np.where(low, score, np.inf).min()
        if g_max - g_min < tol:
            converged = True
            break

        k_i = gram[idx[i], idx]
        b = g_max - score
        quad = qd[i] + qd - 2.0 * k_i
        quad = np.where(quad > 0, quad, TAU)
        gain = np.where(low & (b > 0), -(b * b) / quad, np.inf)
        j = int(gain.argmin())

        q_i = z[i] * z * k_i
        q_j = z[j] * z * gram[idx[j], idx]
        ai_old, aj_old = a[i], a[j]
        if z[i] != z[j]:
            quad_ij = max(qd[i] + qd[j] + 2.0 * q_i[j], TAU)
            delta = (-grad[i] - grad[j]) / quad_ij
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j], a[i] = 0.0, diff
            elif a[i] < 0:
                a[i], a[j] = 0.0, -diff
            if diff > 0:
                if a[i] > C:
                    a[i], a[j] = C, C - diff
            elif a[j] > C:
                a[j], a[i] = C, C + diff
        else:
            quad_ij = max(qd[i] + qd[j] - 2.0 * q_i[j], TAU)
            delta = (grad[i] - grad[j]) / quad_ij
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > C:
                if a[i] > C:
                    a[i], a[j] = C, total - C
            elif a[j] < 0:
                a[j], a[i] = 0.0, total
            if total > C:
                if a[j] > C:
                    a[j], a[i] = C, total - C
            elif a[i] < 0:
                a[i], a[j] = 0.0, total
        grad += q_i * (a[i] - ai_old) + q_j * (a[j] - aj_old)

    if not converged:
        log.warning("SVR did not converge in %d iterations (n=%d)", max_iter, n)

    bias = -_rho(a, grad, z, C)
    beta = a[:n] - a[n:]
    support = np.flatnonzero(beta != 0.0)
    fitted = gram[:, support] @ beta[support] + bias
    residual_excess = max(0.0, float(np.abs(y - fitted).max()) - eps)
    if residual_excess > tol and not std.any():
        log.warning("identical feature rows with spread targets; residual %.4g beyond tube", residual_excess)

    return RegressionModel(
        kernel=spec,
        support_vectors=zx[support],
        dual_coef=beta[support],
        support_indices=support,
        bias=float(bias),
        feature_mean=mean,
        feature_scale=scale,
        C=C,
        epsilon=eps,
        n_train=n,
        iterations=it,
        converged=converged,
        objective=dual_objective(gram, y, beta, eps),
        residual_excess=residual_excess,
    )


def _rho(a: np.ndarray, grad: np.ndarray, z: np.ndarray, C: float) -> float:
    """Offset from free variables, else the midpoint of the bound-implied interval."""
    zg = z * grad
    at_upper = a >= C
    at_lower = a <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        return float(zg[free].mean())
    ub_mask = (at_upper & (z < 0)) | (at_lower & (z > 0))
    lb_mask = (at_upper & (z > 0)) | (at_lower & (z < 0))
    ub = zg[ub_mask].min() if ub_mask.any() else math.inf
    lb = zg[lb_mask].max() if lb_mask.any() else -math.inf
    if math.isinf(ub) or math.isinf(lb):
        return float(lb if math.isinf(ub) else ub)
    return float((ub + lb) / 2.0)


def predict(model: RegressionModel, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.size == 0:
        return np.zeros(0)
    zx = model.standardize(x)
    if not np.isfinite(zx).all():
        raise DomainError("features must be finite")
    if model.dual_coef.size == 0:
        return np.full(zx.shape[0], model.bias)
    return gram_matrix(model.kernel, zx, model.support_vectors) @ model.dual_coef + model.bias


def kkt_violation(model: RegressionModel, features: np.ndarray, targets: np.ndarray) -> float:
    """Maximal violating-pair gap of the returned solution on its training data (<= tol when converged)."""
    x, y = _check_inputs(features, targets)
    if x.shape[0] != model.n_train:
        raise DomainError(f"model was trained on {model.n_train} rows, got {x.shape[0]}")
    beta = model.training_coefficients()
    zx = model.standardize(x)
    k_beta = gram_matrix(model.kernel, zx)[:, model.support_indices] @ model.dual_coef
    a = np.r_[np.maximum(beta, 0.0), np.maximum(-beta, 0.0)]
    z = np.r_[np.ones(len(y)), -np.ones(len(y))]
    grad = np.r_[k_beta + model.epsilon - y, -k_beta + model.epsilon + y]
    return max(0.0, _violating_gap(a, grad, z, model.C))
