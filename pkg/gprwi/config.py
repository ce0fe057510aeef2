"""Configuration loading for the GPR wall inversion toolkit.

Every physics, sampling, preprocessing, and model constant lives in
``DEFAULT_VALUES`` below. A run merges, in order: defaults, an optional TOML
config file, ``GPRWI_*`` environment variables, and command-line overrides.
"""

from __future__ import annotations

import math
import os
import tomllib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, MutableMapping

import jsonschema

ENV_PREFIX = "GPRWI_"

# run
DEFAULT_SEED = 0
DEFAULT_LOG_LEVEL = "INFO"
DEFAULT_WORKERS = 1

# simulation (grid, source, acquisition)
DEFAULT_CELL_M = 0.002
DEFAULT_WIDTH_M = 0.24
DEFAULT_DEPTH_M = 0.46
DEFAULT_AIR_GAP_M = 0.02
DEFAULT_PML_CELLS = 10
DEFAULT_PML_ORDER = 3
DEFAULT_PML_REFLECTION = 1e-6
DEFAULT_COURANT = 0.95
DEFAULT_TIME_WINDOW_S = 12e-9
DEFAULT_CENTER_FREQ_HZ = 1e9
DEFAULT_ANTENNA_OFFSET_M = 0.04
DEFAULT_ANTENNA_HEIGHT_M = 0.01
DEFAULT_N_TRACES = 40
DEFAULT_TRACE_STEP_M = 0.004
DEFAULT_N_SAMPLES = 255
DEFAULT_LAYER_SIGMA = 0.001
DEFAULT_BLOWUP_THRESHOLD = 1e6
DEFAULT_CHECK_INTERVAL = 16

# scene sampler
DEFAULT_MAX_LAYERS = 6
DEFAULT_TOTAL_MIN_M = 0.10
DEFAULT_TOTAL_MAX_M = 0.46
DEFAULT_QUANTUM_M = 0.005
DEFAULT_LAYER_FLOOR_M = 0.02
DEFAULT_EPS_MIN = 1.0
DEFAULT_EPS_MAX = 7.0
DEFAULT_MAX_GRAINS = 20
DEFAULT_GRAIN_RADIUS_MIN_M = 0.002
DEFAULT_GRAIN_RADIUS_MAX_M = 0.008
DEFAULT_MAX_RETRIES = 100

# dataset
DEFAULT_DATASET_SIZE = 500
DEFAULT_SPLIT_RATIO = 0.8

# preprocessing
DEFAULT_CUTOFF_HZ = 5e8
DEFAULT_SEGMENT_WIDTH = 40
DEFAULT_SEGMENTS_PER_SCAN = 8
DEFAULT_THRESHOLD_FRAC = 0.2

# model and training
DEFAULT_CONV_CHANNELS = (8, 16, 32, 16, 8, 4)
DEFAULT_KERNEL = (20, 5)
DEFAULT_LINEAR_SIZES = (5000, 2000, 800, 300, 12)
DEFAULT_FLATTEN_SIZE = 9024
DEFAULT_INPUT_SHAPE = (255, 40)
DEFAULT_LR = 0.001
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_ADAM_EPS = 1e-8
DEFAULT_BN_MOMENTUM = 0.1
DEFAULT_BN_EPS = 1e-5
DEFAULT_EPOCHS = 100
DEFAULT_BATCH_SIZE = 16
DEFAULT_PATIENCE = 20
DEFAULT_DECODE_THRESHOLD_M = 0.015
DEFAULT_DTYPE = "float32"

TARGET_SIZE = 12
MAX_TOTAL_THICKNESS_M = 0.46
SPEED_OF_LIGHT = 299_792_458.0

ENV_FIELD_MAP = {
    "config_file": f"{ENV_PREFIX}CONFIG_FILE",
    "seed": f"{ENV_PREFIX}SEED",
    "log_level": f"{ENV_PREFIX}LOG_LEVEL",
    "workers": f"{ENV_PREFIX}WORKERS",
}

PATH_KEYS = ("scene", "out", "dataset", "model", "catalog", "input", "pretrained", "report")

DEFAULT_VALUES: dict[str, dict[str, Any]] = {
    "run": {
        "seed": DEFAULT_SEED,
        "log_level": DEFAULT_LOG_LEVEL,
        "workers": DEFAULT_WORKERS,
    },
    "simulation": {
        "cell_m": DEFAULT_CELL_M,
        "width_m": DEFAULT_WIDTH_M,
        "depth_m": DEFAULT_DEPTH_M,
        "air_gap_m": DEFAULT_AIR_GAP_M,
        "pml_cells": DEFAULT_PML_CELLS,
        "pml_order": DEFAULT_PML_ORDER,
        "pml_reflection": DEFAULT_PML_REFLECTION,
        "courant": DEFAULT_COURANT,
        "time_window_s": DEFAULT_TIME_WINDOW_S,
        "center_freq_hz": DEFAULT_CENTER_FREQ_HZ,
        "antenna_offset_m": DEFAULT_ANTENNA_OFFSET_M,
        "antenna_height_m": DEFAULT_ANTENNA_HEIGHT_M,
        "n_traces": DEFAULT_N_TRACES,
        "trace_step_m": DEFAULT_TRACE_STEP_M,
        "n_samples": DEFAULT_N_SAMPLES,
        "layer_sigma": DEFAULT_LAYER_SIGMA,
        "blowup_threshold": DEFAULT_BLOWUP_THRESHOLD,
        "check_interval": DEFAULT_CHECK_INTERVAL,
    },
    "scene": {
        "max_layers": DEFAULT_MAX_LAYERS,
        "total_min_m": DEFAULT_TOTAL_MIN_M,
        "total_max_m": DEFAULT_TOTAL_MAX_M,
        "quantum_m": DEFAULT_QUANTUM_M,
        "layer_floor_m": DEFAULT_LAYER_FLOOR_M,
        "eps_min": DEFAULT_EPS_MIN,
        "eps_max": DEFAULT_EPS_MAX,
        "max_grains": DEFAULT_MAX_GRAINS,
        "grain_radius_min_m": DEFAULT_GRAIN_RADIUS_MIN_M,
        "grain_radius_max_m": DEFAULT_GRAIN_RADIUS_MAX_M,
        "max_retries": DEFAULT_MAX_RETRIES,
    },
    "dataset": {
        "n_samples": DEFAULT_DATASET_SIZE,
        "split_ratio": DEFAULT_SPLIT_RATIO,
        "split_seed": None,
    },
    "preprocess": {
        "cutoff_hz": DEFAULT_CUTOFF_HZ,
        "segment_width": DEFAULT_SEGMENT_WIDTH,
        "segments_per_scan": DEFAULT_SEGMENTS_PER_SCAN,
        "threshold_frac": DEFAULT_THRESHOLD_FRAC,
    },
    "model": {
        "conv_channels": list(DEFAULT_CONV_CHANNELS),
        "kernel": list(DEFAULT_KERNEL),
        "linear_sizes": list(DEFAULT_LINEAR_SIZES),
        "flatten_size": DEFAULT_FLATTEN_SIZE,
        "input_shape": list(DEFAULT_INPUT_SHAPE),
        "lr": DEFAULT_LR,
        "beta1": DEFAULT_BETA1,
        "beta2": DEFAULT_BETA2,
        "adam_eps": DEFAULT_ADAM_EPS,
        "bn_momentum": DEFAULT_BN_MOMENTUM,
        "bn_eps": DEFAULT_BN_EPS,
        "epochs": DEFAULT_EPOCHS,
        "batch_size": DEFAULT_BATCH_SIZE,
        "patience": DEFAULT_PATIENCE,
        "decode_threshold_m": DEFAULT_DECODE_THRESHOLD_M,
        "dtype": DEFAULT_DTYPE,
        "seed": None,
    },
    "paths": {key: None for key in PATH_KEYS},
}


class ConfigError(ValueError):
    """Raised when configuration values are invalid."""


@dataclass(frozen=True, slots=True)
class SimulationSettings:
    """Grid, source, and acquisition parameters for the FDTD solver."""

    cell_m: float = DEFAULT_CELL_M
    width_m: float = DEFAULT_WIDTH_M
    depth_m: float = DEFAULT_DEPTH_M
    air_gap_m: float = DEFAULT_AIR_GAP_M
    pml_cells: int = DEFAULT_PML_CELLS
    pml_order: int = DEFAULT_PML_ORDER
    pml_reflection: float = DEFAULT_PML_REFLECTION
    courant: float = DEFAULT_COURANT
    time_window_s: float = DEFAULT_TIME_WINDOW_S
    center_freq_hz: float = DEFAULT_CENTER_FREQ_HZ
    antenna_offset_m: float = DEFAULT_ANTENNA_OFFSET_M
    antenna_height_m: float = DEFAULT_ANTENNA_HEIGHT_M
    n_traces: int = DEFAULT_N_TRACES
    trace_step_m: float = DEFAULT_TRACE_STEP_M
    n_samples: int = DEFAULT_N_SAMPLES
    layer_sigma: float = DEFAULT_LAYER_SIGMA
    blowup_threshold: float = DEFAULT_BLOWUP_THRESHOLD
    check_interval: int = DEFAULT_CHECK_INTERVAL

    @property
    def max_dt_s(self) -> float:
        """2D Courant bound for the configured cell size."""

        return self.cell_m / (SPEED_OF_LIGHT * math.sqrt(2.0))


@dataclass(frozen=True, slots=True)
class SamplerSettings:
    """Random wall sampler parameters."""

    max_layers: int = DEFAULT_MAX_LAYERS
    total_min_m: float = DEFAULT_TOTAL_MIN_M
    total_max_m: float = DEFAULT_TOTAL_MAX_M
    quantum_m: float = DEFAULT_QUANTUM_M
    layer_floor_m: float = DEFAULT_LAYER_FLOOR_M
    eps_min: float = DEFAULT_EPS_MIN
    eps_max: float = DEFAULT_EPS_MAX
    max_grains: int = DEFAULT_MAX_GRAINS
    grain_radius_min_m: float = DEFAULT_GRAIN_RADIUS_MIN_M
    grain_radius_max_m: float = DEFAULT_GRAIN_RADIUS_MAX_M
    max_retries: int = DEFAULT_MAX_RETRIES


@dataclass(frozen=True, slots=True)
class DatasetSettings:
    n_samples: int = DEFAULT_DATASET_SIZE
    split_ratio: float = DEFAULT_SPLIT_RATIO
    split_seed: int = DEFAULT_SEED


@dataclass(frozen=True, slots=True)
class PreprocessSettings:
    cutoff_hz: float = DEFAULT_CUTOFF_HZ
    segment_width: int = DEFAULT_SEGMENT_WIDTH
    segments_per_scan: int = DEFAULT_SEGMENTS_PER_SCAN
    threshold_frac: float = DEFAULT_THRESHOLD_FRAC


@dataclass(frozen=True, slots=True)
class ModelConfig:
    """Network topology and training hyperparameters.

    ``flatten_size`` is the width the first linear layer expects; ``None``
    derives it from the convolution stack instead of checking it.
    """

    conv_channels: tuple[int, ...] = DEFAULT_CONV_CHANNELS
    kernel: tuple[int, int] = DEFAULT_KERNEL
    linear_sizes: tuple[int, ...] = DEFAULT_LINEAR_SIZES
    flatten_size: int | None = DEFAULT_FLATTEN_SIZE
    input_shape: tuple[int, int] = DEFAULT_INPUT_SHAPE
    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    adam_eps: float = DEFAULT_ADAM_EPS
    bn_momentum: float = DEFAULT_BN_MOMENTUM
    bn_eps: float = DEFAULT_BN_EPS
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    patience: int = DEFAULT_PATIENCE
    decode_threshold_m: float = DEFAULT_DECODE_THRESHOLD_M
    dtype: str = DEFAULT_DTYPE
    seed: int = DEFAULT_SEED

    def __post_init__(self) -> None:
        if not self.conv_channels:
            raise ConfigError("conv_channels may not be empty")
        if not self.linear_sizes or self.linear_sizes[-1] != TARGET_SIZE:
            raise ConfigError(f"last linear size must be {TARGET_SIZE}")
        if len(self.kernel) != 2 or min(self.kernel) < 1:
            raise ConfigError("kernel must be two positive integers")
        if len(self.input_shape) != 2 or min(self.input_shape) < 1:
            raise ConfigError("input_shape must be two positive integers")
        if any(size < 1 for size in (*self.conv_channels, *self.linear_sizes)):
            raise ConfigError("channel and linear sizes must be positive")
        if self.dtype not in {"float32", "float64"}:
            raise ConfigError("dtype must be float32 or float64")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")


@dataclass(frozen=True, slots=True)
class RunConfig:
    """Merged configuration for one CLI run."""

    seed: int = DEFAULT_SEED
    log_level: str = DEFAULT_LOG_LEVEL
    workers: int = DEFAULT_WORKERS
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    dataset: DatasetSettings = field(default_factory=DatasetSettings)
    preprocess: PreprocessSettings = field(default_factory=PreprocessSettings)
    model: ModelConfig = field(default_factory=ModelConfig)
    paths: Mapping[str, Path] = field(default_factory=dict)
    config_file: Path | None = None


def _json_type(value: Any) -> Any:
    if value is None:
        return ["integer", "number", "string", "null"]
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, int):
        return "integer"
    if isinstance(value, float):
        return "number"
    if isinstance(value, (list, tuple)):
        return "array"
    return "string"


def _build_schema() -> dict[str, Any]:
    sections: dict[str, Any] = {}
    for section, values in DEFAULT_VALUES.items():
        properties = {key: {"type": _json_type(value)} for key, value in values.items()}
        if section == "paths":
            properties = {key: {"type": "string"} for key in values}
        sections[section] = {"type": "object", "properties": properties, "additionalProperties": False}
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "type": "object",
        "properties": sections,
        "additionalProperties": False,
    }


CONFIG_SCHEMA: dict[str, Any] = _build_schema()


def load_run_config(
    config_file: str | Path | None = None,
    overrides: Mapping[str, Mapping[str, Any]] | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    """Merge defaults, config file, environment, and overrides into a RunConfig."""

    env_values = _extract_env_values(os.environ if environ is None else environ)
    config_path_value = config_file or env_values.pop("config_file", None)
    env_values.pop("config_file", None)
    file_values = _load_config_file(config_path_value)

    merged: dict[str, dict[str, Any]] = {section: dict(values) for section, values in DEFAULT_VALUES.items()}
    for layer in (file_values, {"run": env_values}, overrides or {}):
        for section, values in layer.items():
            if section not in merged:
                raise ConfigError(f"Unknown configuration section: {section}")
            unknown = set(values) - set(merged[section])
            if unknown:
                raise ConfigError(f"Unknown configuration keys in [{section}]: {', '.join(sorted(unknown))}")
            _merge_layer(merged[section], values)

    return _normalize_values(merged, config_path_value)


def validate_config_payload(payload: Mapping[str, Any]) -> None:
    """Validate a parsed config file against ``CONFIG_SCHEMA``."""

    try:
        jsonschema.validate(instance=dict(payload), schema=CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        location = ".".join(str(part) for part in exc.absolute_path) or "<root>"
        raise ConfigError(f"Invalid config at {location}: {exc.message}") from exc


def _extract_env_values(env: Mapping[str, str]) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for key, env_name in ENV_FIELD_MAP.items():
        if env.get(env_name):
            values[key] = env[env_name]
    return values


def _load_config_file(path_value: str | Path | None) -> dict[str, Any]:
    if not path_value:
        return {}
    path = _parse_path(path_value, field="config_file")
    try:
        with path.open("rb") as handle:
            data = tomllib.load(handle)
    except FileNotFoundError as exc:
        raise ConfigError(f"Config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"Config file is not valid TOML: {path}: {exc}") from exc
    validate_config_payload(data)
    return data


def _merge_layer(base: MutableMapping[str, Any], overrides: Mapping[str, Any]) -> None:
    for key, value in overrides.items():
        if value is None:
            continue
        base[key] = value


def _build_section(cls: type, values: Mapping[str, Any], section: str) -> Any:
    kwargs: dict[str, Any] = {}
    for spec in fields(cls):
        if spec.name not in values:
            continue
        raw = values[spec.name]
        default = spec.default
        if isinstance(default, bool):
            kwargs[spec.name] = bool(raw)
        elif isinstance(default, int):
            kwargs[spec.name] = _parse_int(raw, field=f"{section}.{spec.name}")
        elif isinstance(default, float):
            kwargs[spec.name] = _parse_float(raw, field=f"{section}.{spec.name}")
        elif isinstance(default, tuple):
            kwargs[spec.name] = _parse_int_tuple(raw, field=f"{section}.{spec.name}")
        else:
            kwargs[spec.name] = raw
    return cls(**kwargs)


def _normalize_values(values: Mapping[str, Mapping[str, Any]], config_path_value: str | Path | None) -> RunConfig:
    run = values["run"]
    seed = _parse_int(run["seed"], field="run.seed", minimum=0)
    workers = _parse_int(run["workers"], field="run.workers", minimum=1)
    log_level = str(run["log_level"]).upper()
    if log_level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
        raise ConfigError(f"Invalid log level: {run['log_level']!r}")

    simulation = _build_section(SimulationSettings, values["simulation"], "simulation")
    if simulation.pml_cells < 8:
        raise ConfigError("simulation.pml_cells must be >= 8")
    if not 0 < simulation.courant:
        raise ConfigError("simulation.courant must be positive")
    sampler = _build_section(SamplerSettings, values["scene"], "scene")

    dataset_values = dict(values["dataset"])
    if dataset_values.get("split_seed") is None:
        dataset_values["split_seed"] = seed
    dataset = _build_section(DatasetSettings, dataset_values, "dataset")
    if not 0.0 < dataset.split_ratio < 1.0:
        raise ConfigError("dataset.split_ratio must lie strictly between 0 and 1")

    preprocess = _build_section(PreprocessSettings, values["preprocess"], "preprocess")

    model_values = dict(values["model"])
    if model_values.get("seed") is None:
        model_values["seed"] = seed
    # flatten_size = 0 in a config file means "derive from the conv stack"
    derive_flatten = model_values.get("flatten_size") == 0
    if derive_flatten:
        del model_values["flatten_size"]
    model = _build_section(ModelConfig, model_values, "model")
    if derive_flatten:
        model = replace(model, flatten_size=None)

    paths = {
        key: _parse_path(value, field=f"paths.{key}")
        for key, value in values["paths"].items()
        if value not in (None, "")
    }

    return RunConfig(
        seed=seed,
        log_level=log_level,
        workers=workers,
        simulation=simulation,
        sampler=sampler,
        dataset=dataset,
        preprocess=preprocess,
        model=model,
        paths=paths,
        config_file=_parse_optional_path(config_path_value, field="config_file"),
    )


def _parse_int(value: Any, *, field: str, minimum: int | None = None, maximum: int | None = None) -> int:
    if isinstance(value, bool):
        raise ConfigError(f"Invalid integer for {field}: {value!r}")
    try:
        if isinstance(value, float):
            if not value.is_integer():
                raise ValueError(value)
            int_value = int(value)
        elif isinstance(value, int):
            int_value = value
        else:
            int_value = int(str(value).strip())
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"Invalid integer for {field}: {value!r}") from exc

    if minimum is not None and int_value < minimum:
        raise ConfigError(f"{field} must be >= {minimum}")
    if maximum is not None and int_value > maximum:
        raise ConfigError(f"{field} must be <= {maximum}")
    return int_value


def _parse_float(value: Any, *, field: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"Invalid number for {field}: {value!r}")
    try:
        number = float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"Invalid number for {field}: {value!r}") from exc
    if not math.isfinite(number):
        raise ConfigError(f"{field} must be finite")
    return number


def _parse_int_tuple(value: Any, *, field: str) -> tuple[int, ...]:
    if isinstance(value, str):
        items: list[Any] = [part for part in value.replace("x", ",").split(",") if part.strip()]
    elif isinstance(value, (list, tuple)):
        items = list(value)
    else:
        raise ConfigError(f"Invalid list for {field}: {value!r}")
    return tuple(_parse_int(item, field=field, minimum=1) for item in items)


def _parse_path(value: Any, *, field: str) -> Path:
    if isinstance(value, Path):
        return value.expanduser().resolve()
    if not isinstance(value, str):
        raise ConfigError(f"Invalid path for {field}: {value!r}")
    stripped = value.strip()
    if not stripped:
        raise ConfigError(f"{field} may not be empty")
    return Path(stripped).expanduser().resolve()


def _parse_optional_path(value: Any, *, field: str) -> Path | None:
    if value in (None, ""):
        return None
    return _parse_path(value, field=field)
