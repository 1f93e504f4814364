import json
import os
import subprocess
import sys

import pytest

from blockprop import cli

from conftest import TINY_CONFIG, tree_checksums

FAMILIES = {
    "dataset_summary", "daily_activity", "user_actions", "block_ecdf", "block_correlation",
    "block_correlation_summary", "auc_sweep", "shap_beeswarm", "importance_bump", "feature_importance",
    "group_importance", "best_worst", "regression_bins", "regression_metrics",
}


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.conf"
    path.write_text(TINY_CONFIG)
    return path


@pytest.fixture(scope="module")
def full_run(config_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["run-all", "--config", str(config_file), "--out", str(out)]) == cli.EXIT_OK
    return out


def test_run_all_writes_every_report_family(full_run):
    index = json.loads((full_run / "report" / "index.json").read_text())
    assert set(index["families"]) == FAMILIES
    for fam in index["families"].values():
        assert (full_run / "report" / fam["file"]).exists() and fam["rows"] > 0


def test_sidecars_carry_provenance_without_clock(full_run, config_file):
    meta = json.loads((full_run / "train" / "cv.csv.meta.json").read_text())
    for key in ("config_hash", "seed", "manifest_version", "blockprop_version"):
        assert key in meta
    assert meta["config_hash"] == cli.load_config(config_file).hash()
    assert not any("time" in k for k in meta)


def test_degenerate_quantile_is_recorded(full_run):
    datasets = json.loads((full_run / "label" / "index.json").read_text())["datasets"]
    degenerate = [d for d in datasets if d.get("degenerate")]
    assert degenerate and all(d["quantile"] == 0.9995 for d in degenerate)
    models = json.loads((full_run / "train" / "index.json").read_text())["models"]
    skipped = [m for m in models if m.get("degenerate")]
    assert {m["key"] for m in skipped} == {d["key"] for d in degenerate}
    assert not any((full_run / "train" / "models" / f"{m['key']}.json").exists() for m in skipped)


def test_rerun_is_byte_identical(full_run, config_file, tmp_path):
    assert cli.main(["run-all", "--config", str(config_file), "--out", str(tmp_path)]) == 0
    assert tree_checksums(tmp_path) == tree_checksums(full_run)


def test_chained_commands_match_run_all(full_run, config_file, tmp_path):
    base = ["--config", str(config_file), "--out", str(tmp_path)]
    for command in ["synth", *(name for name, _ in cli.PIPELINE)]:
        assert cli.main([command, *base]) == 0, command
    assert tree_checksums(tmp_path) == tree_checksums(full_run)


def test_missing_upstream_artifact_is_a_dependency_error(config_file, tmp_path):
    assert cli.main(["train", "--config", str(config_file), "--out", str(tmp_path)]) == cli.EXIT_DEPENDENCY
    assert cli.main(["report", "--config", str(config_file), "--out", str(tmp_path)]) == cli.EXIT_DEPENDENCY


def test_config_errors_exit_two(tmp_path):
    bad = tmp_path / "bad.conf"
    bad.write_text("no_such_key = 1\n")
    assert cli.main(["ingest", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["ingest", "--config", str(tmp_path / "absent.conf")]) == cli.EXIT_CONFIG
    assert cli.main(["ingest", "--quantiles", "0.5,2", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_corrupt_replay_exits_four(tmp_path):
    junk = tmp_path / "junk.ndjson"
    junk.write_text("not json\n" * 10)
    cfg = tmp_path / "c.conf"
    cfg.write_text(f"replay = {junk}\n")
    assert cli.main(["ingest", "--config", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_DATA


def test_definition_override_restricts_datasets(full_run, config_file, tmp_path):
    base = ["--config", str(config_file), "--out", str(tmp_path)]
    for command in ("synth", "ingest", "features"):
        assert cli.main([command, *base]) == 0
    assert cli.main(["label", *base, "--definition", "norm", "--quantiles", "0.9"]) == 0
    datasets = json.loads((tmp_path / "label" / "index.json").read_text())["datasets"]
    assert [(d["definition"], d["quantile"]) for d in datasets] == [("norm", 0.9)]


def test_console_entry_point_runs_as_module(tmp_path):
    env = {**os.environ, "BLOCKPROP_NUMBA": "0"}
    proc = subprocess.run(
        [sys.executable, "-m", "blockprop.cli", "train", "--out", str(tmp_path)], env=env, capture_output=True, text=True
    )
    assert proc.returncode == cli.EXIT_DEPENDENCY
    assert "label" in proc.stderr
