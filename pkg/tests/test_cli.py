import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from sigsurrogate.analysis import read_summary_report, summarize_errors
from sigsurrogate.cli import main
from sigsurrogate.datagen import read_dataset
from sigsurrogate.ga import read_log
from sigsurrogate.modelio import load_model

TINY = {
    "network": {"rows": 2, "cols": 2, "segment_cells": 10},
    "sim": {"horizon_s": 300, "warmup_s": 60},
    "train": {"nn_epochs": 2, "gbt_trees": 3},
    "optimize": {"population": 10, "iterations": 12, "runs_per_config": 1},
    "analyze": {"best_k": 3, "random_k": 2},
    "mitigate": {"rounds": 2, "top_k": 8},
}


@pytest.fixture(scope="module")
def cfg(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory, cfg):
    """dataset -> roster -> optimize two models, shared by the read-only tests below."""
    out = tmp_path_factory.mktemp("pipe")
    assert run("dataset", "--config", cfg, "--n", 200, "--train-n", 160, "--seed", 3, "--out", out) == 0
    assert run("train", "--config", cfg, "--kind", "roster", "--train", out / "data/train.txt",
               "--test", out / "data/test.txt", "--out", out) == 0
    for name in ("gbt-l2-31", "nn-tanh-64x64"):
        assert run("optimize", "--config", cfg, "--model", out / f"models/{name}.json", "--out", out) == 0
    return out


def test_dataset_files(pipeline):
    lines = [len((pipeline / f"data/{n}.txt").read_text().splitlines()) for n in ("train", "test")]
    assert lines == [160, 40]


def test_dataset_rerun_is_byte_identical(pipeline, cfg, tmp_path):
    assert run("dataset", "--config", cfg, "--n", 200, "--train-n", 160, "--seed", 3, "--out", tmp_path) == 0
    for n in ("train", "test"):
        assert (tmp_path / f"data/{n}.txt").read_bytes() == (pipeline / f"data/{n}.txt").read_bytes()


def test_dataset_range_error(cfg, tmp_path, capsys):
    assert run("dataset", "--config", cfg, "--n", 200, "--train-n", 300, "--out", tmp_path) == 1
    assert "train-n" in capsys.readouterr().err


def test_roster_has_sixteen_models(pipeline):
    names = sorted(p.stem for p in (pipeline / "models").glob("*.json"))
    assert len(names) == 16
    assert sum(n.startswith("nn-") for n in names) == 8
    report = read_summary_report(pipeline / "reports/test_errors_roster.json")
    assert set(report) == set(names)


def test_retrain_is_byte_identical(pipeline, cfg, tmp_path):
    assert run("train", "--config", cfg, "--kind", "roster", "--train", pipeline / "data/train.txt", "--out", tmp_path) == 0
    for p in (pipeline / "models").glob("*.json"):
        assert (tmp_path / "models" / p.name).read_bytes() == p.read_bytes()


def test_single_model_with_spec_file(pipeline, cfg, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"num_leaves": 4, "num_trees": 2, "learning_rate": 0.1, "min_samples_leaf": 5,
                                "objective": "l1", "feature_mode": "raw", "reg_lambda": 0.0, "seed": 11}))
    assert run("train", "--config", cfg, "--kind", "gbt", "--spec", spec, "--name", "mine",
               "--train", pipeline / "data/train.txt", "--out", tmp_path) == 0
    m = load_model(tmp_path / "models/mine.json")
    assert m.spec.objective == "l1" and m.spec.seed == 11 and len(m.trees) == 2


def test_train_missing_dataset(cfg, tmp_path, capsys):
    assert run("train", "--config", cfg, "--kind", "gbt", "--train", tmp_path / "none.txt", "--out", tmp_path) == 1
    assert "none.txt" in capsys.readouterr().err


def test_optimize_logs(pipeline):
    paths = sorted((pipeline / "logs/gbt-l2-31").glob("*.jsonl.gz"))
    assert len(paths) == 20
    for p in paths[:5]:
        lg = read_log(p)
        assert lg.fitness_id == "gbt-l2-31" and lg.is_elitist_monotone()


def test_full_protocol_log_count(pipeline, cfg, tmp_path):
    assert run("optimize", "--config", cfg, "--model", pipeline / "models/gbt-l1-31.json",
               "--runs-per-config", 5, "--out", tmp_path) == 0
    assert len(list((tmp_path / "logs/gbt-l1-31").glob("*.jsonl.gz"))) == 100


def test_optimize_zero_runs(pipeline, cfg, tmp_path):
    assert run("optimize", "--config", cfg, "--model", pipeline / "models/gbt-l2-31.json",
               "--runs-per-config", 0, "--out", tmp_path) == 1


def test_optimize_with_oracle(cfg, tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps([{"population": 6, "iterations": 3}]))
    assert run("optimize", "--config", cfg, "--oracle", "--ga-grid", grid, "--runs-per-config", 2, "--out", tmp_path) == 0
    assert len(list((tmp_path / "logs/oracle").glob("*.jsonl.gz"))) == 2


def test_analyze_errors_report_round_trip(pipeline, cfg, tmp_path):
    model = pipeline / "models/gbt-l2-31.json"
    assert run("analyze", "--config", cfg, "--what", "errors", "--model", model,
               "--logs", pipeline / "logs/gbt-l2-31", "--test", pipeline / "data/test.txt", "--out", tmp_path) == 0
    base = tmp_path / "analysis/errors/gbt-l2-31"
    report = read_summary_report(base / "report.json")
    rows = (base / "optima_pairs.csv").read_text().splitlines()[1:]
    pairs = np.array([[float(r.split(",")[2]), float(r.split(",")[3])] for r in rows])
    assert report["optima"] == summarize_errors(pairs)
    assert report["optima"].n == len(rows)
    assert (base / "errors.png").stat().st_size > 0


def test_analyze_trajectories_and_pca(pipeline, cfg, tmp_path):
    assert run("analyze", "--config", cfg, "--what", "trajectories", "--model", pipeline / "models/nn-tanh-64x64.json",
               "--logs", pipeline / "logs/nn-tanh-64x64", "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "analysis/trajectories/nn-tanh-64x64/report.json").read_text())
    assert len(doc["runs"]) == 5
    assert run("analyze", "--config", cfg, "--what", "pca", "--logs", pipeline / "logs/gbt-l2-31",
               "--logs", pipeline / "logs/nn-tanh-64x64", "--out", tmp_path) == 0
    pts = (tmp_path / "analysis/pca/points.csv").read_text().splitlines()
    assert len(pts) == 1 + 2 * 5 * 12


def test_analyze_unknown_what(tmp_path, capsys):
    assert run("analyze", "--what", "everything", "--out", tmp_path) == 1
    assert "usage" in capsys.readouterr().err


def test_mitigate_invalid_strategy(tmp_path):
    assert run("mitigate", "--strategy", "prayer", "--out", tmp_path) == 1


def test_mitigate_and_manifest(pipeline, cfg, tmp_path):
    nn_models = sorted((pipeline / "models").glob("nn-*.json"))
    assert run("mitigate", "--config", cfg, "--strategy", "ensemble", "--models", *nn_models,
               "--test", pipeline / "data/test.txt", "--out", tmp_path) == 0
    assert run("mitigate", "--config", cfg, "--strategy", "active", "--kind", "gbt",
               "--train", pipeline / "data/train.txt", "--out", tmp_path) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert set(manifest["runs"]) == {"mitigate:ensemble", "mitigate:active"}
    for entry in manifest["runs"].values():
        assert len(entry["config_digest"]) == 64 and "seeds" in entry
        for paths in entry["artifacts"].values():
            assert all((tmp_path / p).exists() for p in paths)
    grown = read_dataset(tmp_path / "mitigation/active_gbt_train.txt")
    assert len(grown) > 160


def test_pipeline_manifest_paths_exist(pipeline):
    manifest = json.loads((pipeline / "manifest.json").read_text())
    assert manifest["tool"] == "sigsurrogate"
    assert {"dataset", "train:roster", "optimize:gbt-l2-31"} <= set(manifest["runs"])
    for entry in manifest["runs"].values():
        for paths in entry["artifacts"].values():
            assert all((pipeline / p).exists() for p in paths)


def test_bad_config_key(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"network": {"lanes": 2}}))
    assert run("dataset", "--config", cfg, "--out", tmp_path) == 1


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "sigsurrogate", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "sigsurrogate" in r.stdout


def _tree_bytes(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_demo_rerun_is_byte_identical(cfg, tmp_path):
    small = tmp_path / "small.json"
    small.write_text(json.dumps({**TINY, "dataset": {"n": 150, "train_n": 120}}))
    assert run("demo", "--config", small, "--out", tmp_path / "a") == 0
    assert run("demo", "--config", small, "--out", tmp_path / "b", "--workers", 2) == 0
    a, b = _tree_bytes(tmp_path / "a"), _tree_bytes(tmp_path / "b")
    assert a.keys() == b.keys() and a == b
    assert any(k.endswith(".png") for k in a)
