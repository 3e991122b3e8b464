from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import DomainError


class PoolingMethod(str, Enum):
    Mean = "mean"
    Median = "median"
    Min = "min"
    Max = "max"


_REDUCERS = {
    # sorted columns make the sum independent of row order
    PoolingMethod.Mean: lambda x, axis: np.sort(x, axis=axis).mean(axis=axis),
    # np.median averages the central pair for even n
    PoolingMethod.Median: np.median,
    PoolingMethod.Min: np.min,
    PoolingMethod.Max: np.max,
}


def pool(features: np.ndarray, method: PoolingMethod | str) -> np.ndarray:
    """Column-wise statistic over the frames (rows) of one video."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DomainError(f"pool needs a non-empty n x F matrix, got shape {x.shape}")
    return _REDUCERS[PoolingMethod(method)](x, axis=0)


def pool_videos(per_video: list[np.ndarray], method: PoolingMethod | str) -> np.ndarray:
    return np.stack([pool(f, method) for f in per_video])
