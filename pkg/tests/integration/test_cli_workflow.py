from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from gprwi.cli import main
from gprwi.schemas import validate_payload
from gprwi.storage import read_bscan, read_manifest


def _run(capsys: pytest.CaptureFixture[str], *argv: str) -> tuple[int, dict, list[str]]:
    status = main(list(argv))
    lines = capsys.readouterr().out.splitlines()
    summary = json.loads(lines[-1])
    validate_payload("summary", summary)
    assert summary["status"] == status
    return status, summary, lines[:-1]


@pytest.fixture
def dataset_dir(tmp_path: Path, coarse_config_file: Path, capsys: pytest.CaptureFixture[str]) -> Path:
    out = tmp_path / "ds"
    status, summary, _ = _run(
        capsys, "gen-dataset", "--config-file", str(coarse_config_file), "--seed", "3", "-n", "6", "--out", str(out)
    )
    assert status == 0
    assert summary["samples"] == 6
    assert summary["metrics"]["operations"]["sample"] == 6
    return out


def test_simulate_preset(tmp_path: Path, coarse_config_file: Path, capsys: pytest.CaptureFixture[str]) -> None:
    out = tmp_path / "scene1.bscan"

    status, summary, _ = _run(capsys, "simulate", "--preset", "scene1", "--config-file", str(coarse_config_file), "--out", str(out))

    assert status == 0
    assert summary["command"] == "simulate"
    assert summary["shape"] == [255, 40]
    assert summary["outputs"] == [str(out.resolve())]
    scan = read_bscan(out)
    assert scan.shape == (255, 40)
    assert scan.is_finite()


def test_simulate_scene_file(tmp_path: Path, coarse_config_file: Path, capsys: pytest.CaptureFixture[str]) -> None:
    scene = tmp_path / "wall.scene"
    scene.write_text("seed 4\nlayer 0.12 4.0\nlayer 0.08 2.5\n", encoding="utf-8")
    out = tmp_path / "wall.bscan"

    status, summary, _ = _run(capsys, "simulate", "--scene", str(scene), "--config-file", str(coarse_config_file), "--out", str(out))

    assert status == 0
    assert summary["layers"] == 2
    assert summary["metrics"]["operations"]["bscan"] == 1


def test_generated_dataset_is_reproducible(
    tmp_path: Path, dataset_dir: Path, coarse_config_file: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    again = tmp_path / "again"
    status, _, _ = _run(
        capsys, "gen-dataset", "--config-file", str(coarse_config_file), "--seed", "3", "-n", "6", "--out", str(again)
    )

    assert status == 0
    manifest = read_manifest(dataset_dir)
    assert manifest.n_samples == 6
    assert manifest.split_seed == 3
    for relative in ["manifest.txt", *(entry.file for entry in manifest)]:
        assert (dataset_dir / relative).read_bytes() == (again / relative).read_bytes()


def test_train_evaluate_predict(
    tmp_path: Path, dataset_dir: Path, coarse_config_file: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    config = ("--config-file", str(coarse_config_file))
    model = tmp_path / "model.ckpt"
    report = tmp_path / "loss.csv"

    status, summary, _ = _run(
        capsys, "train", *config, "--dataset", str(dataset_dir), "--out", str(model), "--report", str(report),
        "--epochs", "2", "--no-timing",
    )
    assert status == 0
    assert summary["train_samples"] == 5
    assert summary["test_samples"] == 1
    assert summary["epochs_run"] == 2
    assert summary["metrics"]["operations"]["epoch"] == 2
    assert model.is_file()
    assert report.read_text(encoding="utf-8").splitlines()[0] == "epoch,train_loss,test_loss"

    csv_out = tmp_path / "eval.csv"
    status, summary, lines = _run(
        capsys, "evaluate", *config, "--model", str(model), "--dataset", str(dataset_dir), "--out", str(csv_out)
    )
    assert status == 0
    assert lines[0].startswith("Evaluation test (1 samples)")
    assert summary["samples"] == 1
    assert summary["thickness_mae_mm"] >= 0
    assert "baseline_thickness_mae_mm" in summary
    assert csv_out.read_text(encoding="utf-8").startswith("metric,overall,percent")

    scans = sorted(str(path) for path in (dataset_dir / "scans").glob("*.bscan"))[:2]
    status, summary, lines = _run(capsys, "predict", *config, "--model", str(model), "--scan", *scans, "--format", "json-lines")
    assert status == 0
    assert summary["scans"] == 2
    assert summary["metrics"]["operations"]["prediction"] == 2
    records = [json.loads(line) for line in lines]
    assert [record["scan"] for record in records] == [Path(scan).name for scan in scans]
    for record in records:
        validate_payload("prediction", record)
        assert len(record["raw"]) == 12

    status, _, lines = _run(capsys, "predict", *config, "--model", str(model), "--scan", scans[0])
    assert status == 0
    assert lines[0] == Path(scans[0]).name


def test_finetune_with_comparison(
    tmp_path: Path, dataset_dir: Path, coarse_config_file: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    config = ("--config-file", str(coarse_config_file))
    pretrained = tmp_path / "pretrained.ckpt"
    tuned = tmp_path / "tuned.ckpt"
    status, _, _ = _run(capsys, "train", *config, "--dataset", str(dataset_dir), "--out", str(pretrained), "--epochs", "1")
    assert status == 0

    status, summary, lines = _run(
        capsys, "finetune", *config, "--from", str(pretrained), "--dataset", str(dataset_dir), "--out", str(tuned),
        "--epochs", "1", "--compare",
    )

    assert status == 0
    assert summary["pretrained"] is True
    assert "fresh_best_test_loss" in summary
    assert "pretrained train" in lines[0]
    assert tuned.is_file()


def test_preprocess_labels_measured_radargram(
    tmp_path: Path, coarse_config_file: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    rng = np.random.default_rng(0)
    data = rng.normal(scale=0.05, size=(300, 60))
    data[20:30] += np.hanning(10)[:, None]
    radargram = tmp_path / "measured.csv"
    radargram.write_text("dt=4e-11\n" + "\n".join(",".join(f"{v:.6f}" for v in row) for row in data) + "\n", encoding="utf-8")
    scene = tmp_path / "known.scene"
    scene.write_text("layer 0.115 5.31\nlayer 0.2 1.5\n", encoding="utf-8")
    labeled = tmp_path / "labeled"

    status, summary, _ = _run(
        capsys, "preprocess", "--config-file", str(coarse_config_file), "--input", str(radargram),
        "--scene", str(scene), "--out", str(labeled), "--segments-per-scan", "3",
    )

    assert status == 0
    assert summary["segments"] == 3
    assert summary["labeled"] is True
    manifest = read_manifest(labeled)
    assert manifest.n_samples == 3
    assert {entry.target.values[0] for entry in manifest} == {0.115}

    unlabeled = tmp_path / "segments"
    status, summary, _ = _run(
        capsys, "preprocess", "--input", str(radargram), "--out", str(unlabeled), "--segments-per-scan", "2"
    )
    assert status == 0
    assert sorted(path.name for path in unlabeled.iterdir()) == ["segment_000.bscan", "segment_001.bscan"]
    assert read_bscan(unlabeled / "segment_000.bscan").shape == (255, 40)


def test_sweep_writes_csv(tmp_path: Path, coarse_config_file: Path, capsys: pytest.CaptureFixture[str]) -> None:
    out = tmp_path / "sweep.csv"

    status, summary, _ = _run(
        capsys, "sweep", "--config-file", str(coarse_config_file), "--parameter", "eps_r", "--values", "3,5", "--out", str(out)
    )

    assert status == 0
    assert summary["points"] == 2
    rows = out.read_text(encoding="utf-8").splitlines()
    assert rows[0] == "eps_r,lag_s,normal_lag_s,expected_lag_s,amplitude"
    assert len(rows) == 3
    assert float(rows[1].split(",")[0]) == 3.0
