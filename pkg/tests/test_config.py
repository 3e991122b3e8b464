from __future__ import annotations

from pathlib import Path

import pytest

from leaklab.config import ExperimentConfig, ProtocolsConfig, load_config
from leaklab.dataset import GeneratorConfig
from leaklab.errors import ConfigError
from leaklab.pooling import PoolingMethod


def _write(tmp_path, text: str):
    path = tmp_path / "experiment.yaml"
    path.write_text(text, encoding="utf-8")
    return path


def test_yaml_document(tmp_path):
    cfg = load_config(
        _write(
            tmp_path,
            """
generator:
  n_videos: 50
  seed: 3
splits:
  frame_fraction: 0.5
  frame_sampling: strided
svr:
  C: 4.0
protocols:
  ids: [Clean, NoFinetune, Clean]
  pooling: max
  kernel: {kind: rbf, gamma: 0.5}
n_splits: 3
""",
        )
    )
    assert cfg.generator.n_videos == 50
    assert cfg.splits.frame_sampling == "strided"
    assert cfg.svr.C == 4.0
    assert cfg.protocols.ids == ["Clean", "NoFinetune"]
    assert cfg.protocols.pooling is PoolingMethod.Max
    assert cfg.protocols.kernel.kind == "gaussian"
    assert cfg.extractor.training.momentum == 0.9


def test_empty_document_is_all_defaults(tmp_path):
    assert load_config(_write(tmp_path, "")) == ExperimentConfig()


@pytest.mark.parametrize(
    "text",
    [
        "seeds: 3\n",
        "protocols:\n  ids: [Sloppy]\n",
        "generator: {}\ndataset: {manifest: m.csv}\n",
        "- just\n- a list\n",
        "splits: {folds: 1}\n",
        "svr: {C: [unclosed\n",
    ],
)
def test_bad_documents(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")


def test_relative_manifest_resolves_next_to_config(tmp_path):
    (tmp_path / "sub").mkdir()
    path = tmp_path / "sub" / "exp.yaml"
    path.write_text("dataset:\n  manifest: data/manifest.csv\n", encoding="utf-8")
    assert load_config(path).dataset.manifest == tmp_path / "sub" / "data" / "manifest.csv"


def test_grid_expands_to_every_pooling_and_kernel():
    combos = ProtocolsConfig(grid=True).combinations()
    assert len(combos) == 12
    assert len(set((p, k.kind) for p, k in combos)) == 12
    assert ProtocolsConfig().combinations() == [(PoolingMethod.Mean, ProtocolsConfig().kernel)]


def test_shipped_configs_load():
    configs = Path(__file__).resolve().parents[1] / "configs"
    default = load_config(configs / "default.yaml")
    assert default.model_copy(update={"generator": None}) == ExperimentConfig()
    assert default.generator == GeneratorConfig()
    smoke = load_config(configs / "smoke.yaml")
    assert smoke.n_splits == 2 and smoke.splits.folds == 3
