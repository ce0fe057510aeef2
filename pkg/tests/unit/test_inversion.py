from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from gprwi import metrics
from gprwi.checkpoint import encode_checkpoint, read_checkpoint
from gprwi.config import ConfigError, ModelConfig
from gprwi.errors import CHECKPOINT_ERROR, DATA_ERROR, SHAPE_ERROR, NetworkError, TrainingError
from gprwi.inversion import (
    TrainingSet,
    TrainReport,
    build_model,
    compare_transfer,
    config_from_checkpoint,
    conv_output_shape,
    fine_tune,
    forward,
    load_model,
    predict,
    predict_arrays,
    predict_batch,
    save_model,
    train,
)
from gprwi.models import BScan, WallConfig


def _dataset(cfg: ModelConfig, n: int, seed: int) -> TrainingSet:
    """Inputs whose first rows encode the targets, so a small network can learn them."""

    rng = np.random.default_rng(seed)
    height, width = cfg.input_shape
    thickness = rng.uniform(0.05, 0.2, size=n)
    eps = rng.uniform(2.0, 6.0, size=n)
    x = rng.normal(scale=0.1, size=(n, 1, height, width))
    x[:, 0, :4, :] += (thickness * 5)[:, None, None]
    x[:, 0, 4:8, :] -= (eps / 6)[:, None, None]
    y = np.zeros((n, 12))
    y[:, 0] = thickness
    y[:, 6] = eps
    return TrainingSet(x=x, y=y, ids=tuple(range(100, 100 + n)))


def test_default_topology_flattens_to_reference_width() -> None:
    assert conv_output_shape(ModelConfig()) == (4, 141, 16)


def test_kernel_that_collapses_the_input_is_rejected(tiny_model_config: ModelConfig) -> None:
    with pytest.raises(ConfigError):
        conv_output_shape(replace(tiny_model_config, kernel=(9, 3)))


def test_flatten_mismatch_is_a_config_error(tiny_model_config: ModelConfig) -> None:
    with pytest.raises(ConfigError, match="does not match"):
        build_model(replace(tiny_model_config, flatten_size=100))


def test_layer_order(tiny_model_config: ModelConfig) -> None:
    model = build_model(tiny_model_config)

    names = [name for name, _ in model.network]

    assert names == [
        "conv1", "relu1", "bn1", "conv2", "relu2", "bn2",
        "flatten", "linear1", "tanh1", "linear2", "softplus",
    ]
    assert model.network.named_parameters()[0][1].value.dtype == np.float64


def test_same_seed_builds_identical_weights(tiny_model_config: ModelConfig) -> None:
    first = build_model(tiny_model_config).snapshot()
    second = build_model(tiny_model_config).snapshot()

    assert all(np.array_equal(a, b) for a, b in zip(first, second))


def test_forward_checks_input_shape(tiny_model_config: ModelConfig) -> None:
    model = build_model(tiny_model_config)

    assert forward(model, np.zeros((2, 1, 16, 8))).shape == (2, 12)
    with pytest.raises(NetworkError) as excinfo:
        forward(model, np.zeros((2, 16, 8)))
    assert excinfo.value.code == SHAPE_ERROR


def test_training_reduces_the_loss(tiny_model_config: ModelConfig, registry: metrics.MetricsRegistry) -> None:
    cfg = replace(tiny_model_config, lr=0.01, epochs=8)
    train_set = _dataset(cfg, 24, 0)
    test_set = _dataset(cfg, 8, 1)
    seen: list[int] = []

    model, report = train(build_model(cfg), train_set, test_set, cfg, on_epoch=lambda epoch, *_: seen.append(epoch))

    assert report.epochs_run == 8
    assert seen == list(range(1, 9))
    assert report.train_loss[-1] < report.train_loss[0]
    assert report.best_epoch == int(np.argmin(report.test_loss)) + 1
    assert report.metrics["best_test_loss"] == pytest.approx(min(report.test_loss))
    assert report.metrics["parameter_count"] == model.parameter_count
    assert registry.snapshot().operations["epoch"] == 8


def test_training_is_deterministic(tiny_model_config: ModelConfig) -> None:
    cfg = replace(tiny_model_config, epochs=2)
    train_set = _dataset(cfg, 12, 0)
    test_set = _dataset(cfg, 4, 1)

    _, first = train(build_model(cfg), train_set, test_set, cfg)
    _, second = train(build_model(cfg), train_set, test_set, cfg)

    assert first.train_loss == second.train_loss
    assert first.test_loss == second.test_loss


def test_best_parameters_are_restored(tiny_model_config: ModelConfig) -> None:
    cfg = replace(tiny_model_config, lr=0.05, epochs=6)
    test_set = _dataset(cfg, 8, 1)

    model, report = train(build_model(cfg), _dataset(cfg, 16, 0), test_set, cfg)

    outputs = predict_arrays(model, test_set.x)
    restored_loss = float(np.mean(np.abs(outputs - test_set.y)))
    assert restored_loss == pytest.approx(min(report.test_loss))


def test_patience_stops_a_stalled_run(tiny_model_config: ModelConfig) -> None:
    cfg = replace(tiny_model_config, lr=0.0, bn_momentum=0.0, epochs=10, patience=2)

    _, report = train(build_model(cfg), _dataset(cfg, 8, 0), _dataset(cfg, 4, 1), cfg)

    assert report.epochs_run == 3
    assert report.best_epoch == 1


def test_optimizer_state_is_restored_with_the_best_parameters(tiny_model_config: ModelConfig, tmp_path: Path) -> None:
    cfg = replace(tiny_model_config, lr=0.0, bn_momentum=0.0, epochs=10, patience=2)

    model, report = train(build_model(cfg), _dataset(cfg, 8, 0), _dataset(cfg, 4, 1), cfg)

    assert report.epochs_run == 3
    assert model.adam.t == 2
    path = tmp_path / "best.ckpt"
    save_model(path, model)
    assert read_checkpoint(path).adam.t == 2


def test_bad_sample_is_reported_by_id(tiny_model_config: ModelConfig) -> None:
    good = _dataset(tiny_model_config, 4, 0)
    x = good.x.copy()
    x[2, 0, 0, 0] = np.nan
    bad = TrainingSet(x=x, y=good.y, ids=good.ids)

    with pytest.raises(TrainingError) as excinfo:
        train(build_model(tiny_model_config), bad, good, tiny_model_config)

    assert excinfo.value.code == DATA_ERROR
    assert excinfo.value.details == {"id": 102, "set": "train"}


def test_empty_test_set_is_rejected(tiny_model_config: ModelConfig) -> None:
    good = _dataset(tiny_model_config, 4, 0)
    empty = TrainingSet(x=np.empty((0, 1, 16, 8)), y=np.empty((0, 12)))

    with pytest.raises(TrainingError):
        train(build_model(tiny_model_config), good, empty, tiny_model_config)


def test_train_report_csv() -> None:
    report = TrainReport(train_loss=[0.5, 0.25], test_loss=[0.75, 0.5], seconds=[1.0, 2.0])

    assert report.to_csv().splitlines() == [
        "epoch,train_loss,test_loss,seconds",
        "1,0.5,0.75,1.000",
        "2,0.25,0.5,2.000",
    ]
    assert report.to_csv(include_timing=False).splitlines()[1] == "1,0.5,0.75"


def test_saved_model_reproduces_predictions(tmp_path: Path, tiny_model_config: ModelConfig) -> None:
    cfg = replace(tiny_model_config, epochs=1)
    data = _dataset(cfg, 8, 0)
    model, _ = train(build_model(cfg), data, data, cfg)
    path = tmp_path / "model.ckpt"

    save_model(path, model)
    loaded = load_model(path, replace(ModelConfig(), input_shape=cfg.input_shape, dtype="float64"))

    assert loaded.config.conv_channels == cfg.conv_channels
    assert loaded.config.kernel == cfg.kernel
    assert loaded.config.linear_sizes == cfg.linear_sizes
    assert loaded.config.flatten_size == cfg.flatten_size
    assert np.allclose(predict_arrays(loaded, data.x), predict_arrays(model, data.x))
    assert loaded.adam.t == model.adam.t


def test_checkpoint_without_conv_layers_is_rejected(tmp_path: Path, tiny_model_config: ModelConfig) -> None:
    path = tmp_path / "odd.ckpt"
    path.write_bytes(encode_checkpoint([("dense.weight", np.zeros((12, 3)))]))

    with pytest.raises(TrainingError) as excinfo:
        config_from_checkpoint(read_checkpoint(path), tiny_model_config)

    assert excinfo.value.code == CHECKPOINT_ERROR


def test_fine_tune_starts_from_checkpoint(tmp_path: Path, tiny_model_config: ModelConfig) -> None:
    cfg = replace(tiny_model_config, epochs=2, batch_size=4)
    data = _dataset(cfg, 8, 0)
    model, _ = train(build_model(cfg), data, data, cfg)
    path = tmp_path / "pretrained.ckpt"
    save_model(path, model)

    tuned, report = fine_tune(path, data, data, replace(cfg, epochs=1))

    assert report.pretrained
    assert report.metrics["pretrained"] is True
    assert tuned.pretrained
    assert tuned.adam.t == 2


def test_predict_normalises_and_decodes(tiny_model_config: ModelConfig, registry: metrics.MetricsRegistry) -> None:
    model = build_model(tiny_model_config)
    data = np.random.default_rng(0).normal(size=(16, 8))
    scan = BScan(data=data, time_window_s=12e-9, trace_step_m=0.004)
    louder = BScan(data=data * 10.0, time_window_s=12e-9, trace_step_m=0.004)

    wall, raw = predict(model, scan)
    [(_, raw_louder)] = predict_batch(model, [louder])

    assert isinstance(wall, WallConfig)
    assert len(wall.layers) <= 6
    assert all(value >= 0 for value in raw.values)
    assert np.allclose(raw.as_array(), raw_louder.as_array())
    assert registry.snapshot().operations["prediction"] == 2


def test_predict_rejects_wrong_scan_shape(tiny_model_config: ModelConfig) -> None:
    model = build_model(tiny_model_config)

    with pytest.raises(NetworkError) as excinfo:
        predict(model, BScan(data=np.ones((15, 8)), time_window_s=1e-9, trace_step_m=0.004))

    assert excinfo.value.code == SHAPE_ERROR


def test_compare_transfer_renders_four_columns(tmp_path: Path, tiny_model_config: ModelConfig) -> None:
    cfg = replace(tiny_model_config, epochs=1)
    data = _dataset(cfg, 8, 0)
    model, _ = train(build_model(cfg), data, data, cfg)
    path = tmp_path / "pretrained.ckpt"
    save_model(path, model)

    comparison = compare_transfer(path, data, data, cfg)

    table = comparison.render()
    header = table.splitlines()[0]
    for title in ("pretrained train", "pretrained test", "fresh train", "fresh test"):
        assert title in header
    assert len(table.splitlines()) == 6
    assert comparison.pretrained_report.pretrained
    assert not comparison.fresh_report.pretrained


@pytest.mark.slow
def test_network_overfits_sixteen_samples(tiny_model_config: ModelConfig) -> None:
    cfg = replace(tiny_model_config, linear_sizes=(64, 12), lr=0.001, epochs=500, batch_size=16, patience=0)
    data = _dataset(cfg, 16, 0)

    _, report = train(build_model(cfg), data, data, cfg)

    assert report.epochs_run == 500
    assert report.train_loss[-1] < 0.1 * report.train_loss[0]


@pytest.mark.slow
def test_default_network_output_is_positive_for_random_input() -> None:
    model = build_model(ModelConfig())
    rng = np.random.default_rng(11)

    for _ in range(20):
        out = forward(model, rng.normal(size=(50, 1, *ModelConfig().input_shape)), "eval")
        assert out.shape == (50, 12)
        assert np.all(out > 0)


@pytest.mark.slow
def test_default_network_gradients_match_finite_differences() -> None:
    cfg = replace(ModelConfig(), dtype="float64")
    model = build_model(cfg)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 1, *cfg.input_shape))
    weights = rng.normal(size=(2, 12))

    model.network.zero_grad()
    forward(model, x, "train")
    model.network.backward(weights)

    tensors = dict(model.network.named_parameters())
    h = 1e-5
    for name in ("conv1.weight", "bn3.gamma", "conv6.bias", "linear1.weight", "linear5.bias"):
        tensor = tensors[name]
        index = np.unravel_index(int(rng.integers(tensor.size)), tensor.shape)
        original = tensor.value[index]
        tensor.value[index] = original + h
        plus = float(np.sum(forward(model, x, "train") * weights))
        tensor.value[index] = original - h
        minus = float(np.sum(forward(model, x, "train") * weights))
        tensor.value[index] = original
        assert tensor.grad is not None
        assert tensor.grad[index] == pytest.approx((plus - minus) / (2 * h), rel=1e-3, abs=1e-6), name
