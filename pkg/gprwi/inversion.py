"""Wall-inversion network: construction, training, transfer learning, and inference."""

from __future__ import annotations

import csv
import io
import re
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .checkpoint import Checkpoint, read_checkpoint, restore_into, save_checkpoint
from .config import ConfigError, ModelConfig
from .errors import CHECKPOINT_ERROR, DATA_ERROR, NON_FINITE_LOSS, SHAPE_ERROR, NetworkError, TrainingError
from .evaluation import DEFAULT_CATALOG, MaterialCatalog, MetricsReport, evaluate_predictions
from .logging import get_logger
from .metrics import record_operation
from .models import BScan, TargetVector, WallConfig
from .nn import BatchNorm2d, Conv2D, Flatten, Layer, Linear, Mode, ReLU, Sequential, Softplus, Tanh, l1_loss
from .optim import AdamState, adam_step
from .preprocess import normalize
from .scene import decode_target

__all__ = [
    "ModelConfig",
    "ModelParams",
    "TrainReport",
    "TrainingSet",
    "TransferComparison",
    "build_model",
    "compare_transfer",
    "config_from_checkpoint",
    "conv_output_shape",
    "fine_tune",
    "forward",
    "load_model",
    "predict",
    "predict_arrays",
    "predict_batch",
    "save_model",
    "train",
]

logger = get_logger(__name__)

EpochCallback = Callable[[int, float, float], None]


def conv_output_shape(cfg: ModelConfig) -> tuple[int, int, int]:
    """Channels, height, and width after the convolution stack."""

    height, width = cfg.input_shape
    kh, kw = cfg.kernel
    for _ in cfg.conv_channels:
        height -= kh - 1
        width -= kw - 1
        if height < 1 or width < 1:
            raise ConfigError(f"kernel {kh}x{kw} collapses input {cfg.input_shape} within the convolution stack")
    return cfg.conv_channels[-1], height, width


@dataclass(slots=True)
class ModelParams:
    """A built network with its configuration and optimiser state."""

    network: Sequential
    config: ModelConfig
    adam: AdamState
    pretrained: bool = False

    @property
    def parameter_count(self) -> int:
        return self.network.parameter_count()

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.config.dtype)

    def snapshot(self) -> list[np.ndarray]:
        return [tensor.value.copy() for _, tensor in self.network.state()]

    def restore(self, values: Sequence[np.ndarray]) -> None:
        for (_, tensor), value in zip(self.network.state(), values):
            tensor.value[...] = value


def build_model(cfg: ModelConfig) -> ModelParams:
    """Six conv/ReLU/batch-norm blocks, flatten, tanh-linked linear layers, softplus head."""

    channels, height, width = conv_output_shape(cfg)
    flatten = channels * height * width
    if cfg.flatten_size is not None and cfg.flatten_size != flatten:
        raise ConfigError(
            f"flatten width {flatten} from kernel {cfg.kernel[0]}x{cfg.kernel[1]} does not match "
            f"the first linear layer input {cfg.flatten_size}"
        )
    rng = np.random.default_rng(cfg.seed)
    layers: list[tuple[str, Layer]] = []
    in_channels = 1
    for index, out_channels in enumerate(cfg.conv_channels, start=1):
        layers.append((f"conv{index}", Conv2D(in_channels, out_channels, cfg.kernel, rng, cfg.dtype)))
        layers.append((f"relu{index}", ReLU()))
        layers.append(
            (f"bn{index}", BatchNorm2d(out_channels, momentum=cfg.bn_momentum, eps=cfg.bn_eps, dtype=cfg.dtype))
        )
        in_channels = out_channels
    layers.append(("flatten", Flatten()))
    in_features = flatten
    for index, out_features in enumerate(cfg.linear_sizes, start=1):
        layers.append((f"linear{index}", Linear(in_features, out_features, rng, cfg.dtype)))
        if index < len(cfg.linear_sizes):
            layers.append((f"tanh{index}", Tanh()))
        in_features = out_features
    layers.append(("softplus", Softplus()))

    model = ModelParams(
        network=Sequential(layers),
        config=cfg,
        adam=AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps),
    )
    logger.debug(
        "inversion.model.built",
        extra={"context": {"parameters": model.parameter_count, "flatten": flatten, "dtype": cfg.dtype}},
    )
    return model


def forward(model: ModelParams, batch: np.ndarray, mode: Mode = "eval") -> np.ndarray:
    expected = (1, *model.config.input_shape)
    if batch.ndim != 4 or tuple(batch.shape[1:]) != expected:
        raise NetworkError(SHAPE_ERROR, f"input batch must be (B, {expected[0]}, {expected[1]}, {expected[2]}), got {batch.shape}")
    return model.network.forward(np.asarray(batch, dtype=model.dtype), mode)


@dataclass(frozen=True, slots=True)
class TrainingSet:
    """Stacked inputs ``(N, 1, H, W)`` with ``(N, 12)`` targets and their sample ids."""

    x: np.ndarray
    y: np.ndarray
    ids: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        ids = tuple(self.ids) or tuple(range(len(self.x)))
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return int(self.x.shape[0])

    def check(self, input_shape: tuple[int, int], name: str) -> None:
        if len(self) == 0:
            raise TrainingError(DATA_ERROR, f"{name} set is empty")
        if self.y.shape != (len(self), 12) or len(self.ids) != len(self):
            raise TrainingError(DATA_ERROR, f"{name} targets must be ({len(self)}, 12)")
        for row, sample_id in enumerate(self.ids):
            sample = self.x[row]
            if sample.shape != (1, *input_shape):
                raise TrainingError(
                    DATA_ERROR,
                    f"sample {sample_id} has shape {sample.shape}",
                    details={"id": sample_id, "set": name},
                )
            if not (np.all(np.isfinite(sample)) and np.all(np.isfinite(self.y[row]))):
                raise TrainingError(DATA_ERROR, f"sample {sample_id} has non-finite values", details={"id": sample_id, "set": name})


@dataclass(slots=True)
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    test_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    pretrained: bool = False
    metrics: dict[str, Any] = field(default_factory=dict)

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def to_csv(self, *, include_timing: bool = True) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        header = ["epoch", "train_loss", "test_loss"] + (["seconds"] if include_timing else [])
        writer.writerow(header)
        for epoch, (train_loss, test_loss) in enumerate(zip(self.train_loss, self.test_loss), start=1):
            row = [str(epoch), repr(train_loss), repr(test_loss)]
            if include_timing:
                row.append(f"{self.seconds[epoch - 1]:.3f}")
            writer.writerow(row)
        return buffer.getvalue()


def _mean_loss(model: ModelParams, data: TrainingSet, batch_size: int) -> float:
    total = 0.0
    for start in range(0, len(data), batch_size):
        pred = forward(model, data.x[start : start + batch_size], "eval")
        value, _ = l1_loss(pred, data.y[start : start + batch_size].astype(pred.dtype))
        total += value * pred.shape[0]
    return total / len(data)


def train(
    model: ModelParams,
    train_set: TrainingSet,
    test_set: TrainingSet,
    cfg: ModelConfig | None = None,
    *,
    on_epoch: EpochCallback | None = None,
) -> tuple[ModelParams, TrainReport]:
    """Mini-batch Adam on the L1 loss; the parameters with the lowest test loss are kept
    together with the optimiser moments of that epoch.

    Batches are reshuffled every epoch from ``(seed, epoch)``. Training stops
    early once the test loss has not improved for ``patience`` epochs.
    """

    config = cfg or model.config
    train_set.check(model.config.input_shape, "train")
    test_set.check(model.config.input_shape, "test")
    adam = model.adam
    adam.lr, adam.beta1, adam.beta2, adam.eps = config.lr, config.beta1, config.beta2, config.adam_eps
    params = [tensor for _, tensor in model.network.named_parameters()]
    report = TrainReport(pretrained=model.pretrained)
    best_loss = np.inf
    best_state: list[np.ndarray] | None = None
    best_adam = adam.copy()
    stale = 0

    for epoch in range(config.epochs):
        started = time.perf_counter()
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_set))
        running = 0.0
        for start in range(0, len(train_set), config.batch_size):
            index = order[start : start + config.batch_size]
            model.network.zero_grad()
            pred = forward(model, train_set.x[index], "train")
            loss, grad = l1_loss(pred, train_set.y[index].astype(pred.dtype))
            if not np.isfinite(loss):
                raise TrainingError(
                    NON_FINITE_LOSS,
                    f"loss became non-finite in epoch {epoch + 1}",
                    details={"epoch": epoch + 1, "ids": [train_set.ids[i] for i in index]},
                )
            model.network.backward(grad)
            adam_step([t.value for t in params], [t.grad for t in params], adam)
            running += loss * len(index)
        train_loss = running / len(train_set)
        test_loss = _mean_loss(model, test_set, config.batch_size)
        report.train_loss.append(train_loss)
        report.test_loss.append(test_loss)
        report.seconds.append(time.perf_counter() - started)
        record_operation("epoch")
        logger.info(
            "inversion.train.epoch",
            extra={"context": {"epoch": epoch + 1, "train_loss": train_loss, "test_loss": test_loss}},
        )
        if on_epoch is not None:
            on_epoch(epoch + 1, train_loss, test_loss)

        if test_loss < best_loss:
            best_loss = test_loss
            best_state = model.snapshot()
            best_adam = adam.copy()
            report.best_epoch = epoch + 1
            stale = 0
        else:
            stale += 1
            if config.patience and stale >= config.patience:
                logger.info("inversion.train.early_stop", extra={"context": {"epoch": epoch + 1, "best": report.best_epoch}})
                break

    if best_state is not None:
        model.restore(best_state)
        model.adam = best_adam
    report.metrics = {
        "epochs_run": report.epochs_run,
        "best_epoch": report.best_epoch,
        "best_test_loss": None if best_state is None else float(best_loss),
        "final_train_loss": report.train_loss[-1] if report.train_loss else None,
        "parameter_count": model.parameter_count,
        "pretrained": model.pretrained,
    }
    return model, report


_CONV_NAME = re.compile(r"^conv(\d+)\.weight$")
_LINEAR_NAME = re.compile(r"^linear(\d+)\.weight$")


def config_from_checkpoint(checkpoint: Checkpoint, base: ModelConfig | None = None) -> ModelConfig:
    """Rebuild the topology fields of ``base`` from the shapes stored in ``checkpoint``."""

    cfg = base or ModelConfig()
    convs: dict[int, tuple[int, ...]] = {}
    linears: dict[int, tuple[int, ...]] = {}
    for name, shape in checkpoint.manifest():
        if match := _CONV_NAME.match(name):
            convs[int(match[1])] = shape
        elif match := _LINEAR_NAME.match(name):
            linears[int(match[1])] = shape
    if not convs or not linears or any(len(convs[k]) != 4 for k in convs):
        raise TrainingError(CHECKPOINT_ERROR, "checkpoint does not describe a convolutional inversion network")
    conv_shapes = [convs[k] for k in sorted(convs)]
    linear_shapes = [linears[k] for k in sorted(linears)]
    try:
        return replace(
            cfg,
            conv_channels=tuple(shape[0] for shape in conv_shapes),
            kernel=(conv_shapes[0][2], conv_shapes[0][3]),
            linear_sizes=tuple(shape[0] for shape in linear_shapes),
            flatten_size=linear_shapes[0][1],
        )
    except ConfigError as exc:
        raise TrainingError(CHECKPOINT_ERROR, f"checkpoint topology is invalid: {exc}") from exc


def load_model(path: Path, cfg: ModelConfig | None = None) -> ModelParams:
    """Build a network shaped like the checkpoint at ``path`` and load its values."""

    checkpoint = read_checkpoint(path)
    try:
        model = build_model(config_from_checkpoint(checkpoint, cfg))
    except ConfigError as exc:
        raise TrainingError(CHECKPOINT_ERROR, f"{path}: {exc}", details={"path": str(path)}) from exc
    model.adam = restore_into(model.network, checkpoint)
    return model


def save_model(path: Path, model: ModelParams) -> None:
    save_checkpoint(path, model.network, model.adam)


def fine_tune(
    pretrained: Path,
    train_set: TrainingSet,
    test_set: TrainingSet,
    cfg: ModelConfig | None = None,
    *,
    on_epoch: EpochCallback | None = None,
) -> tuple[ModelParams, TrainReport]:
    """Continue training from a checkpoint with a fresh optimiser state."""

    model = load_model(pretrained, cfg)
    config = model.config
    model.adam = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
    model.pretrained = True
    logger.info("inversion.finetune.start", extra={"context": {"checkpoint": str(pretrained), "epochs": config.epochs}})
    return train(model, train_set, test_set, config, on_epoch=on_epoch)


def predict_batch(model: ModelParams, scans: Sequence[BScan]) -> list[tuple[WallConfig, TargetVector]]:
    """Normalise and decode every scan into a truncated layer stack and its raw 12-vector."""

    expected = tuple(model.config.input_shape)
    for index, scan in enumerate(scans):
        if scan.shape != expected:
            raise NetworkError(SHAPE_ERROR, f"scan {index} has shape {scan.shape}, expected {expected}", details={"index": index})
    if not scans:
        return []
    batch = np.stack([normalize(scan).data for scan in scans])[:, None, :, :]
    outputs = forward(model, batch, "eval")
    results = []
    for row in outputs:
        raw = TargetVector.from_array(row)
        results.append((decode_target(raw, model.config.decode_threshold_m), raw))
        record_operation("prediction")
    return results


def predict(model: ModelParams, scan: BScan) -> tuple[WallConfig, TargetVector]:
    return predict_batch(model, [scan])[0]


@dataclass(frozen=True, slots=True)
class TransferComparison:
    """Fresh and checkpoint-initialised runs on the same data."""

    fresh_report: TrainReport
    pretrained_report: TrainReport
    fresh: dict[str, MetricsReport]
    pretrained: dict[str, MetricsReport]
    tuned: ModelParams

    def render(self) -> str:
        rows = [
            ("thickness error [mm]", lambda m: f"{m.thickness.overall:.1f}"),
            ("thickness error [%]", lambda m: f"{m.thickness.percent:.1f}"),
            ("permittivity error", lambda m: f"{m.permittivity.overall:.1f}"),
            ("permittivity error [%]", lambda m: f"{m.permittivity.percent:.1f}"),
            ("accuracy [%]", lambda m: "-" if m.accuracy is None else f"{100.0 * m.accuracy:.1f}"),
        ]
        columns = [
            ("pretrained train", self.pretrained["train"]),
            ("pretrained test", self.pretrained["test"]),
            ("fresh train", self.fresh["train"]),
            ("fresh test", self.fresh["test"]),
        ]
        lines = [f"{'':<24}" + "".join(f"{title:>18}" for title, _ in columns)]
        for label, cell in rows:
            lines.append(f"{label:<24}" + "".join(f"{cell(report):>18}" for _, report in columns))
        return "\n".join(lines) + "\n"


def predict_arrays(model: ModelParams, x: np.ndarray, *, batch_size: int = 64) -> np.ndarray:
    """Raw ``(N, 12)`` outputs for an already normalised ``(N, 1, H, W)`` stack."""

    if len(x) == 0:
        return np.empty((0, 12), dtype=model.dtype)
    return np.concatenate([forward(model, x[start : start + batch_size], "eval") for start in range(0, len(x), batch_size)])


def _evaluate_sets(
    model: ModelParams, train_set: TrainingSet, test_set: TrainingSet, catalog: MaterialCatalog | None
) -> dict[str, MetricsReport]:
    return {
        name: evaluate_predictions(predict_arrays(model, data.x), data.y, catalog, label=name)
        for name, data in (("train", train_set), ("test", test_set))
    }


def compare_transfer(
    pretrained: Path,
    train_set: TrainingSet,
    test_set: TrainingSet,
    cfg: ModelConfig,
    *,
    catalog: MaterialCatalog | None = DEFAULT_CATALOG,
) -> TransferComparison:
    """Train from the checkpoint and from scratch with identical data and settings."""

    tuned, tuned_report = fine_tune(pretrained, train_set, test_set, cfg)
    fresh_cfg = replace(cfg, **{name: getattr(tuned.config, name) for name in ("conv_channels", "kernel", "linear_sizes", "flatten_size")})
    fresh, fresh_report = train(build_model(fresh_cfg), train_set, test_set, fresh_cfg)
    comparison = TransferComparison(
        fresh_report=fresh_report,
        pretrained_report=tuned_report,
        fresh=_evaluate_sets(fresh, train_set, test_set, catalog),
        pretrained=_evaluate_sets(tuned, train_set, test_set, catalog),
        tuned=tuned,
    )
    logger.info(
        "inversion.compare.done",
        extra={
            "context": {
                "pretrained_test_loss": min(tuned_report.test_loss, default=None),
                "fresh_test_loss": min(fresh_report.test_loss, default=None),
            }
        },
    )
    return comparison
