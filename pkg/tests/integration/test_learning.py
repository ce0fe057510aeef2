from __future__ import annotations

from pathlib import Path

import pytest

from gprwi.config import ModelConfig, SamplerSettings, SimulationSettings
from gprwi.dataset import generate_dataset, load_arrays, split_dataset
from gprwi.evaluation import mean_predictor_baseline, thickness_errors
from gprwi.inversion import TrainingSet, build_model, predict_arrays, train


@pytest.mark.slow
def test_network_beats_the_mean_predictor_on_synthetic_walls(tmp_path: Path, coarse_settings: SimulationSettings) -> None:
    """500 coarse-grid walls, 400 to train and 100 to test, up to 100 epochs."""

    manifest = generate_dataset(500, 21, tmp_path / "ds", settings=coarse_settings, sampler=SamplerSettings(max_grains=0), workers=4)
    train_manifest, test_manifest = split_dataset(manifest, 0.8, 21)
    cfg = ModelConfig(conv_channels=(4, 8), linear_sizes=(64, 12), flatten_size=None)
    sets = []
    for part in (train_manifest, test_manifest):
        x, y, ids = load_arrays(part, shape=cfg.input_shape, dtype=cfg.dtype)
        sets.append(TrainingSet(x, y, tuple(ids)))
    train_set, test_set = sets

    model, report = train(build_model(cfg), train_set, test_set, cfg)

    assert len(train_set) == 400
    assert len(test_set) == 100
    assert report.epochs_run >= 20
    assert report.test_loss[19] < report.test_loss[0]
    network = thickness_errors(predict_arrays(model, test_set.x), test_set.y)
    baseline = mean_predictor_baseline(train_set.y, test_set.y, None)
    assert network.overall < baseline.thickness.overall
