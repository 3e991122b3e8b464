from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .constants import PROTOCOL_IDS
from .dataset import GeneratorConfig
from .endtoend import RegressionHeadConfig
from .errors import ConfigError
from .extractor import ExtractorSpec, TrainConfig
from .pooling import PoolingMethod
from .regressor import KernelSpec, SvrConfig


@dataclass
class Settings:
    log_level: str = os.getenv("LEAKLAB_LOG_LEVEL", "INFO")
    # Feature cache root; unset disables caching unless the config names one
    cache_dir: str | None = os.getenv("LEAKLAB_CACHE_DIR")
    parallel: int = int(os.getenv("LEAKLAB_PARALLEL", "1"))


settings = Settings()


class DatasetSource(BaseModel):
    model_config = ConfigDict(extra="forbid")

    manifest: Path


class SplitsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    frame_fraction: float = Field(0.2, gt=0.0, le=1.0)
    train_val_ratio: tuple[float, float] = (3, 1)
    video_split_ratio: tuple[float, float] = (4, 1)
    frame_sampling: Literal["random", "strided"] = "random"
    folds: int = Field(5, ge=2)
    replicates: int = Field(5, ge=1)


class ExtractorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    architecture: ExtractorSpec = Field(default_factory=ExtractorSpec)
    training: TrainConfig = Field(default_factory=TrainConfig)


class ProtocolsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    ids: list[str] = Field(default_factory=lambda: list(PROTOCOL_IDS), min_length=1)
    pooling: PoolingMethod = PoolingMethod.Mean
    kernel: KernelSpec = Field(default_factory=KernelSpec)
    # Evaluate every pooling method x grid_kernels instead of the single pair above
    grid: bool = False
    grid_kernels: list[KernelSpec] = Field(
        default_factory=lambda: [
            KernelSpec(kind="linear"),
            KernelSpec(kind="polynomial"),
            KernelSpec(kind="gaussian"),
        ]
    )

    @field_validator("ids")
    @classmethod
    def _known_ids(cls, v: list[str]) -> list[str]:
        unknown = [p for p in v if p not in PROTOCOL_IDS]
        if unknown:
            raise ValueError(f"unknown protocol id(s) {unknown}; expected one of {list(PROTOCOL_IDS)}")
        return list(dict.fromkeys(v))

    def combinations(self) -> list[tuple[PoolingMethod, KernelSpec]]:
        if not self.grid:
            return [(self.pooling, self.kernel)]
        return [(p, k) for k in self.grid_kernels for p in PoolingMethod]


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    generator: GeneratorConfig | None = None
    dataset: DatasetSource | None = None
    splits: SplitsConfig = Field(default_factory=SplitsConfig)
    extractor: ExtractorConfig = Field(default_factory=ExtractorConfig)
    svr: SvrConfig = Field(default_factory=SvrConfig)
    endtoend: RegressionHeadConfig = Field(default_factory=RegressionHeadConfig)
    protocols: ProtocolsConfig = Field(default_factory=ProtocolsConfig)
    seed: int = Field(0, ge=0)
    n_splits: int = Field(5, ge=1)
    parallel: int = Field(1, ge=1)
    cache_dir: Path | None = None

    @model_validator(mode="after")
    def _one_data_source(self) -> "ExperimentConfig":
        if self.generator is not None and self.dataset is not None:
            raise ValueError("give either a generator or a dataset section, not both")
        return self


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a YAML or JSON experiment document; relative manifest paths resolve against it."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping, got {type(raw).__name__}")
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}:\n{e}") from e
    if cfg.dataset is not None and not cfg.dataset.manifest.is_absolute():
        cfg = cfg.model_copy(
            update={"dataset": DatasetSource(manifest=path.parent / cfg.dataset.manifest)}
        )
    return cfg
