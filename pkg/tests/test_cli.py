from __future__ import annotations

import json

import pytest
import yaml

from conftest import tiny_config
from leaklab.cli import main


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(tiny_config().model_dump(mode="json")), encoding="utf-8")
    return path


def _run(argv: list[str]) -> int:
    return main(["--log-level", "WARNING", *argv])


def test_gen_data_writes_a_manifest(tmp_path, config_file, capsys):
    assert _run(["gen-data", "--out", str(tmp_path / "data"), "--config", str(config_file), "--seed", "4"]) == 0
    manifest = tmp_path / "data" / "manifest.csv"
    assert manifest.exists()
    assert len(manifest.read_text(encoding="utf-8").splitlines()) == 1 + 40
    assert "[gen-data]" in capsys.readouterr().out


@pytest.mark.parametrize("kind, expect_leaky", [("clean", False), ("leaky", True)])
def test_split_then_audit(tmp_path, config_file, capsys, kind, expect_leaky):
    plan = tmp_path / "plan.json"
    assert _run(["split", "--config", str(config_file), "--kind", kind, "--out", str(plan)]) == 0
    capsys.readouterr()
    assert _run(["audit", "--plan", str(plan), "--config", str(config_file)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["consistent"] is True
    assert report["ft_leaky"] is expect_leaky
    assert report["tainted_test_videos"] == 0


def test_audit_exits_nonzero_for_a_lying_plan(tmp_path, config_file, capsys):
    plan = tmp_path / "plan.json"
    _run(["split", "--config", str(config_file), "--kind", "leaky", "--out", str(plan)])
    doc = json.loads(plan.read_text(encoding="utf-8"))
    doc["ft_leaky"] = False
    plan.write_text(json.dumps(doc), encoding="utf-8")
    assert _run(["audit", "--plan", str(plan), "--config", str(config_file)]) == 1


def test_run_then_report(tmp_path, config_file, capsys):
    run_dir = tmp_path / "run"
    code = _run(
        ["run", "--config", str(config_file), "--out", str(run_dir), "--protocol", "Clean",
         "--protocol", "LeakyFt_CleanTest", "--seeds", "1"]
    )
    assert code == 0
    table = capsys.readouterr().out
    assert "LeakyFt_CleanTest" in table and "Clean" in table
    assert len((run_dir / "results.jsonl").read_text(encoding="utf-8").splitlines()) == 2

    assert _run(["report", "--in", str(run_dir), "--out", str(tmp_path / "report"), "--format", "csv"]) == 0
    assert (tmp_path / "report" / "table.csv").read_text(encoding="utf-8").startswith("protocol,plcc,srocc")
    for name in ("training_curves.csv", "class_histogram.csv", "kernel_bars.csv", "validation_gap.csv"):
        assert (tmp_path / "report" / name).exists()


def test_unknown_protocol_override_exits_2(tmp_path, config_file, capsys):
    code = _run(["run", "--config", str(config_file), "--out", str(tmp_path / "run"), "--protocol", "Nope"])
    assert code == 2
    assert "[leaklab] error" in capsys.readouterr().err


def test_bad_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("n_splits: 0\n", encoding="utf-8")
    assert _run(["run", "--config", str(bad), "--out", str(tmp_path / "run")]) == 2
    assert "invalid config" in capsys.readouterr().err
