"""Wall sampling, scene files, rasterization, and target encoding."""

from __future__ import annotations

import math
from dataclasses import replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import DEFAULT_WIDTH_M, SamplerSettings, SimulationSettings
from .errors import (
    CONSTRAINT_ERROR,
    GEOMETRY_ERROR,
    IO_ERROR,
    SCENE_PARSE_ERROR,
    DatasetError,
    SceneError,
    SimulationError,
)
from .logging import get_logger
from .models import MAX_LAYERS, Layer, NoiseGrain, SimGrid, TargetVector, WallConfig

__all__ = [
    "SCENE_PRESETS",
    "LAYER_COUNT_WEIGHTS",
    "decode_target",
    "format_scene",
    "layer_counts",
    "from_target",
    "parse_scene",
    "rasterize",
    "read_scene",
    "render_stack",
    "sample_layer_count",
    "sample_wall",
    "time_grid",
    "to_target",
]

logger = get_logger(__name__)

LAYER_COUNT_WEIGHTS = np.arange(1, MAX_LAYERS + 1, dtype=np.float64)
_LAYER_COUNT_PROBS = LAYER_COUNT_WEIGHTS / LAYER_COUNT_WEIGHTS.sum()

SCENE_PRESETS: dict[str, WallConfig] = {
    "scene1": WallConfig(layers=(Layer(0.128, 4.283), Layer(0.105, 4.3725), Layer(0.143, 5.516))),
    "scene2": WallConfig(layers=(Layer(0.063, 5.423), Layer(0.065, 5.226), Layer(0.042, 2.991))),
    "scene3": WallConfig(layers=(Layer(0.05, 6.278), Layer(0.05, 7.584), Layer(0.05, 5.841))),
}


# --- sampling ---------------------------------------------------------------


def sample_layer_count(rng: np.random.Generator, max_layers: int = MAX_LAYERS) -> int:
    """Draw a layer count in ``1..max_layers`` with weights proportional to the count."""

    if max_layers == MAX_LAYERS:
        probs = _LAYER_COUNT_PROBS
    else:
        weights = np.arange(1, max_layers + 1, dtype=np.float64)
        probs = weights / weights.sum()
    return int(rng.choice(len(probs), p=probs)) + 1


def sample_wall(
    rng: np.random.Generator,
    settings: SamplerSettings | None = None,
    *,
    seed: int = 0,
    width_m: float = DEFAULT_WIDTH_M,
) -> WallConfig:
    """Sample a random wall.

    The layer count is drawn first and kept. The total thickness is then
    drawn in whole quanta from the part of the allowed range that leaves room
    for the floor of every layer. Each layer gets the floor
    thickness plus an equal-probability multinomial share of what remains, so
    deeper layers are as thick as shallow ones on average.
    """

    cfg = settings or SamplerSettings()
    quanta_min = int(round(cfg.total_min_m / cfg.quantum_m))
    quanta_max = int(round(cfg.total_max_m / cfg.quantum_m))
    floor_quanta = int(round(cfg.layer_floor_m / cfg.quantum_m))

    for attempt in range(cfg.max_retries):
        n_layers = sample_layer_count(rng, cfg.max_layers)
        lowest = max(quanta_min, floor_quanta * n_layers)
        if lowest > quanta_max:
            logger.debug("scene.sample.retry", extra={"context": {"attempt": attempt, "layers": n_layers}})
            continue
        total_quanta = int(rng.integers(lowest, quanta_max + 1))
        remaining = total_quanta - floor_quanta * n_layers
        shares = rng.multinomial(remaining, np.full(n_layers, 1.0 / n_layers))
        thicknesses = [(floor_quanta + int(share)) * cfg.quantum_m for share in shares]
        permittivities = rng.uniform(cfg.eps_min, cfg.eps_max, size=n_layers)
        layers = tuple(Layer(float(t), float(e)) for t, e in zip(thicknesses, permittivities))

        total_m = total_quanta * cfg.quantum_m
        n_grains = int(rng.integers(0, cfg.max_grains + 1))
        grains: list[NoiseGrain] = []
        for _ in range(n_grains):
            radius = float(rng.uniform(cfg.grain_radius_min_m, cfg.grain_radius_max_m))
            x = float(rng.uniform(radius, width_m - radius))
            y = float(rng.uniform(radius, total_m - radius))
            eps = float(rng.uniform(cfg.eps_min, cfg.eps_max))
            grains.append(NoiseGrain(x, y, radius, eps))

        config = WallConfig(layers=layers, grains=tuple(grains), seed=seed)
        config.validate()
        return config

    raise SceneError(
        CONSTRAINT_ERROR,
        f"could not satisfy wall constraints after {cfg.max_retries} attempts",
        details={"seed": seed},
    )


# --- targets ----------------------------------------------------------------


def to_target(config: WallConfig) -> TargetVector:
    values = [0.0] * (2 * MAX_LAYERS)
    for index, layer in enumerate(config.layers[:MAX_LAYERS]):
        values[index] = float(layer.thickness_m)
        values[MAX_LAYERS + index] = float(layer.eps_r)
    return TargetVector(tuple(values))


def from_target(vector: TargetVector, *, seed: int = 0) -> WallConfig:
    """Rebuild the layer stack from every nonzero thickness slot (grains are not encoded)."""

    layers = tuple(
        Layer(thickness, eps)
        for thickness, eps in zip(vector.thicknesses, vector.permittivities)
        if thickness > 0
    )
    return WallConfig(layers=layers, seed=seed)


def decode_target(raw: TargetVector, threshold_m: float = 0.015) -> WallConfig:
    """Turn a network output into a layer stack.

    Layers are read from slot 0 while the thickness stays at or above
    ``threshold_m``; the first thinner slot ends the stack.
    """

    layers: list[Layer] = []
    for thickness, eps in zip(raw.thicknesses, raw.permittivities):
        if thickness < threshold_m:
            break
        layers.append(Layer(float(thickness), float(eps)))
    return WallConfig(layers=tuple(layers))


# --- scene text format ------------------------------------------------------


def _fmt(value: float) -> str:
    return format(float(value), ".6g")


def format_scene(config: WallConfig) -> str:
    lines = [f"seed {int(config.seed)}"]
    lines.extend(f"layer {_fmt(layer.thickness_m)} {_fmt(layer.eps_r)}" for layer in config.layers)
    lines.extend(
        f"grain {_fmt(grain.x_m)} {_fmt(grain.y_m)} {_fmt(grain.radius_m)} {_fmt(grain.eps_r)}"
        for grain in config.grains
    )
    return "\n".join(lines) + "\n"


def parse_scene(text: str, *, source: str = "<scene>") -> WallConfig:
    """Parse the line-oriented scene format; ``#`` starts a comment."""

    layers: list[Layer] = []
    grains: list[NoiseGrain] = []
    seed = 0
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        keyword, *args = line.split()
        try:
            if keyword == "layer" and len(args) == 2:
                layers.append(Layer(_parse_number(args[0]), _parse_number(args[1])))
            elif keyword == "grain" and len(args) == 4:
                x, y, radius, eps = (_parse_number(arg) for arg in args)
                grains.append(NoiseGrain(x, y, radius, eps))
            elif keyword == "seed" and len(args) == 1:
                seed = int(args[0])
                if seed < 0:
                    raise ValueError(args[0])
            else:
                raise ValueError(line)
        except ValueError as exc:
            raise SceneError(
                SCENE_PARSE_ERROR,
                f"{source}: line {line_no}: cannot parse {raw_line.strip()!r}",
                details={"line": line_no},
            ) from exc
    config = WallConfig(layers=tuple(layers), grains=tuple(grains), seed=seed)
    config.validate()
    return config


def _parse_number(token: str) -> float:
    value = float(token)
    if not math.isfinite(value):
        raise ValueError(token)
    return value


def read_scene(path: Path) -> WallConfig:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(IO_ERROR, f"cannot read scene file {path}: {exc}", details={"path": str(path)}) from exc
    return parse_scene(text, source=str(path))


def render_stack(config: WallConfig, materials: Sequence[str] | None = None, *, title: str | None = None) -> str:
    """Render a wall stack as a fixed-width table, one row per layer."""

    header = f"{'layer':<6}{'depth [m]':<18}{'thickness [m]':<15}{'eps_r':<9}"
    if materials is not None:
        header += "material"
    lines = [title] if title else []
    lines.append(header.rstrip())
    top = 0.0
    for index, layer in enumerate(config.layers):
        bottom = top + layer.thickness_m
        row = f"{index + 1:<6}{f'{top:.3f} - {bottom:.3f}':<18}{layer.thickness_m:<15.3f}{layer.eps_r:<9.3f}"
        if materials is not None:
            row += materials[index]
        lines.append(row.rstrip())
        top = bottom
    if not config.layers:
        lines.append("(no layers)")
    return "\n".join(lines) + "\n"


# --- rasterization ----------------------------------------------------------


def _cells(extent_m: float, cell_m: float, name: str) -> int:
    count = int(round(extent_m / cell_m))
    if count < 1 or abs(count * cell_m - extent_m) > 1e-9:
        raise SimulationError(GEOMETRY_ERROR, f"cell size {cell_m} m does not divide {name} {extent_m} m")
    return count


def time_grid(settings: SimulationSettings) -> tuple[float, int]:
    """Time step and step count covering the window exactly at the configured Courant factor."""

    n_steps = int(math.ceil(settings.time_window_s / (settings.courant * settings.max_dt_s) - 1e-9))
    return settings.time_window_s / n_steps, n_steps


def _cell_centers(count: int, cell_m: float) -> np.ndarray:
    return (np.arange(count, dtype=np.float64) + 0.5) * cell_m


def rasterize(config: WallConfig, cell_m: float | None = None, *, settings: SimulationSettings | None = None) -> SimGrid:
    """Map a wall onto a SimGrid.

    Each wall cell takes the permittivity of the layer containing its center;
    grain disks override it. Air (eps 1, no loss) fills the gap above the wall
    and anything below the last layer. Absorbing-layer cells repeat the
    adjacent interior material.
    """

    sim = settings or SimulationSettings()
    if cell_m is not None:
        sim = replace(sim, cell_m=float(cell_m))
    cell = sim.cell_m
    nx_wall = _cells(sim.width_m, cell, "width")
    ny_wall = _cells(sim.depth_m, cell, "depth")
    gap = _cells(sim.air_gap_m, cell, "air gap")
    pml = sim.pml_cells

    depth_centers = _cell_centers(ny_wall, cell)
    layer_index = np.searchsorted(np.asarray(config.interfaces_m), depth_centers, side="right")
    layer_eps = np.array([layer.eps_r for layer in config.layers] + [1.0])
    layer_sigma = np.array([sim.layer_sigma] * len(config.layers) + [0.0])
    row_index = np.minimum(layer_index, len(config.layers))
    wall_eps = np.tile(layer_eps[row_index], (nx_wall, 1))
    wall_sigma = np.tile(layer_sigma[row_index], (nx_wall, 1))

    total = config.total_thickness_m
    if config.grains:
        xs = _cell_centers(nx_wall, cell)[:, None]
        ys = depth_centers[None, :]
        for grain in config.grains:
            if not grain.inside(sim.width_m, total):
                raise SimulationError(
                    GEOMETRY_ERROR,
                    f"grain at ({grain.x_m}, {grain.y_m}) with radius {grain.radius_m} leaves the wall",
                    details={"grain": [grain.x_m, grain.y_m, grain.radius_m]},
                )
            mask = (xs - grain.x_m) ** 2 + (ys - grain.y_m) ** 2 <= grain.radius_m**2
            wall_eps[mask] = grain.eps_r
            wall_sigma[mask] = sim.layer_sigma

    nx = nx_wall + 2 * pml
    ny = pml + gap + ny_wall + pml
    eps = np.ones((nx, ny), dtype=np.float64)
    sigma = np.zeros((nx, ny), dtype=np.float64)
    for full, wall in ((eps, wall_eps), (sigma, wall_sigma)):
        full[pml : pml + nx_wall, pml + gap : pml + gap + ny_wall] = wall
        full[:pml, :] = full[pml, :]
        full[pml + nx_wall :, :] = full[pml + nx_wall - 1, :]
        full[:, pml + gap + ny_wall :] = full[:, pml + gap + ny_wall - 1 : pml + gap + ny_wall]

    dt, n_steps = time_grid(sim)
    return SimGrid(
        width_m=sim.width_m,
        depth_m=sim.depth_m,
        cell_m=cell,
        eps_r=eps,
        sigma=sigma,
        pml_cells=pml,
        dt_s=dt,
        n_steps=n_steps,
        air_gap_cells=gap,
    )


def layer_counts(configs: Iterable[WallConfig]) -> np.ndarray:
    """Histogram of layer counts 1..6."""

    counts = np.zeros(MAX_LAYERS, dtype=np.int64)
    for config in configs:
        counts[len(config.layers) - 1] += 1
    return counts
