from __future__ import annotations

import logging

import pytest
from hypothesis import settings

from leaklab.config import ExperimentConfig
from leaklab.dataset import GeneratorConfig, VideoRecord, generate

settings.register_profile("leaklab", deadline=None, max_examples=50)
settings.load_profile("leaklab")


@pytest.fixture(autouse=True)
def _propagate_package_logs():
    # the CLI sets propagate=False on the package logger; caplog listens on the root
    logger = logging.getLogger("leaklab")
    old = logger.propagate
    logger.propagate = True
    yield
    logger.propagate = old


@pytest.fixture
def small_videos() -> list[VideoRecord]:
    return generate(GeneratorConfig(n_videos=60, frames_per_video=40, feature_dim=8, seed=3))


def tiny_config(**overrides) -> ExperimentConfig:
    """A matrix small enough to run every protocol in a few seconds."""
    doc = {
        "generator": {"n_videos": 40, "frames_per_video": 10, "feature_dim": 8, "seed": 11},
        "splits": {"folds": 3, "replicates": 2},
        "extractor": {
            "architecture": {"embed_dim": 16, "feature_dim": 8, "seed": 0},
            "training": {"max_iterations": 60, "minibatch_size": 16, "validation_every": 160},
        },
        "endtoend": {"epochs": 2, "layer_scale": 1 / 64},
        "n_splits": 2,
        "seed": 5,
    }
    doc.update(overrides)
    return ExperimentConfig.model_validate(doc)


@pytest.fixture
def tiny() -> ExperimentConfig:
    return tiny_config()
