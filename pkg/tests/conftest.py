from __future__ import annotations

from pathlib import Path
from typing import Iterator

import pytest

from gprwi import metrics
from gprwi.config import ModelConfig, SimulationSettings

# 1 cm cells keep a full-window A-scan well under a second
COARSE_SETTINGS = SimulationSettings(cell_m=0.01, pml_cells=8)

COARSE_CONFIG_TOML = """\
[simulation]
cell_m = 0.01
pml_cells = 8

[scene]
max_grains = 0

[model]
conv_channels = [2, 2]
kernel = [20, 5]
linear_sizes = [8, 12]
flatten_size = 0
epochs = 3
batch_size = 4
patience = 0
"""


@pytest.fixture
def coarse_settings() -> SimulationSettings:
    return COARSE_SETTINGS


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    return ModelConfig(
        conv_channels=(2, 3),
        kernel=(3, 3),
        linear_sizes=(6, 12),
        flatten_size=3 * 12 * 4,
        input_shape=(16, 8),
        dtype="float64",
        batch_size=4,
        epochs=5,
        patience=0,
        seed=0,
    )


@pytest.fixture
def coarse_config_file(tmp_path: Path) -> Path:
    path = tmp_path / "coarse.toml"
    path.write_text(COARSE_CONFIG_TOML, encoding="utf-8")
    return path


@pytest.fixture
def registry() -> Iterator[metrics.MetricsRegistry]:
    installed = metrics.MetricsRegistry()
    metrics.install_registry(installed)
    yield installed
    metrics.install_registry(None)
