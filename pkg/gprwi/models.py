"""Domain models for walls, simulation grids, and radargrams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .config import MAX_TOTAL_THICKNESS_M, TARGET_SIZE
from .errors import GEOMETRY_ERROR, INVALID_SCENE, SHAPE_ERROR, NetworkError, SceneError, SimulationError

MAX_LAYERS = TARGET_SIZE // 2
MIN_LAYER_THICKNESS_M = 0.02
LAYER_EPS_MAX = 8.0
GRAIN_EPS_MAX = 7.0
GRAIN_RADIUS_RANGE_M = (0.002, 0.008)
_TOLERANCE = 1e-9

__all__ = [
    "AScan",
    "BScan",
    "Layer",
    "NoiseGrain",
    "SimGrid",
    "SourceSpec",
    "TargetVector",
    "WallConfig",
]


@dataclass(frozen=True, slots=True)
class Layer:
    """One homogeneous wall layer; index 0 is nearest the scanner."""

    thickness_m: float
    eps_r: float

    def validate(self) -> None:
        if not self.thickness_m >= MIN_LAYER_THICKNESS_M - _TOLERANCE:
            raise SceneError(INVALID_SCENE, f"layer thickness {self.thickness_m} m is below {MIN_LAYER_THICKNESS_M} m")
        if not 1.0 <= self.eps_r <= LAYER_EPS_MAX:
            raise SceneError(INVALID_SCENE, f"layer permittivity {self.eps_r} outside [1, {LAYER_EPS_MAX}]")


@dataclass(frozen=True, slots=True)
class NoiseGrain:
    """Circular inclusion; ``x_m`` is lateral, ``y_m`` is depth below the wall surface."""

    x_m: float
    y_m: float
    radius_m: float
    eps_r: float

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_m, self.y_m)

    def validate(self) -> None:
        low, high = GRAIN_RADIUS_RANGE_M
        if not low - _TOLERANCE <= self.radius_m <= high + _TOLERANCE:
            raise SceneError(INVALID_SCENE, f"grain radius {self.radius_m} m outside [{low}, {high}]")
        if not 1.0 <= self.eps_r <= GRAIN_EPS_MAX:
            raise SceneError(INVALID_SCENE, f"grain permittivity {self.eps_r} outside [1, {GRAIN_EPS_MAX}]")

    def inside(self, width_m: float, depth_m: float) -> bool:
        return (
            self.x_m - self.radius_m >= -_TOLERANCE
            and self.x_m + self.radius_m <= width_m + _TOLERANCE
            and self.y_m - self.radius_m >= -_TOLERANCE
            and self.y_m + self.radius_m <= depth_m + _TOLERANCE
        )


@dataclass(frozen=True, slots=True)
class WallConfig:
    """Ground-truth wall: ordered layers, noise grains, and the seed that produced it.

    Construction does not validate; generated and parsed configs call
    :meth:`validate`, while decoded predictions stay unvalidated estimates.
    """

    layers: tuple[Layer, ...]
    grains: tuple[NoiseGrain, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "grains", tuple(self.grains))

    @property
    def total_thickness_m(self) -> float:
        return float(math.fsum(layer.thickness_m for layer in self.layers))

    @property
    def interfaces_m(self) -> tuple[float, ...]:
        """Depth of every layer's bottom interface below the wall surface."""

        depths: list[float] = []
        running: list[float] = []
        for layer in self.layers:
            running.append(layer.thickness_m)
            depths.append(math.fsum(running))
        return tuple(depths)

    def validate(self) -> None:
        if not 1 <= len(self.layers) <= MAX_LAYERS:
            raise SceneError(INVALID_SCENE, f"wall must have 1..{MAX_LAYERS} layers, got {len(self.layers)}")
        for layer in self.layers:
            layer.validate()
        if self.total_thickness_m > MAX_TOTAL_THICKNESS_M + _TOLERANCE:
            raise SceneError(
                INVALID_SCENE,
                f"total thickness {self.total_thickness_m:.6g} m exceeds {MAX_TOTAL_THICKNESS_M} m",
            )
        for grain in self.grains:
            grain.validate()


@dataclass(frozen=True, slots=True)
class TargetVector:
    """Twelve-slot label: thicknesses in slots 0-5, permittivities in slots 6-11."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        values = tuple(float(value) for value in self.values)
        if len(values) != TARGET_SIZE:
            raise NetworkError(SHAPE_ERROR, f"target vector needs {TARGET_SIZE} values, got {len(values)}")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, array: Sequence[float] | np.ndarray) -> "TargetVector":
        return cls(tuple(float(value) for value in np.asarray(array, dtype=np.float64).ravel()))

    @property
    def thicknesses(self) -> tuple[float, ...]:
        return self.values[:MAX_LAYERS]

    @property
    def permittivities(self) -> tuple[float, ...]:
        return self.values[MAX_LAYERS:]

    @property
    def layer_count(self) -> int:
        return sum(1 for value in self.thicknesses if value > 0)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    def validate(self) -> None:
        if any(value < 0 or not math.isfinite(value) for value in self.values):
            raise SceneError(INVALID_SCENE, "target entries must be finite and non-negative")
        for thickness, eps in zip(self.thicknesses, self.permittivities):
            if (thickness > 0) != (eps > 0):
                raise SceneError(INVALID_SCENE, "thickness and permittivity slots must be zero together")


@dataclass(slots=True)
class SimGrid:
    """Rasterized scene covering the full computational domain.

    ``eps_r`` and ``sigma`` are indexed ``[x, y]`` with ``y`` growing with
    depth and include the absorbing layer, the air gap above the wall, and the
    wall itself (``depth_m`` deep, starting at row ``surface_row``).
    """

    width_m: float
    depth_m: float
    cell_m: float
    eps_r: np.ndarray
    sigma: np.ndarray
    pml_cells: int
    dt_s: float
    n_steps: int
    air_gap_cells: int

    def __post_init__(self) -> None:
        self.eps_r = np.ascontiguousarray(self.eps_r, dtype=np.float64)
        self.sigma = np.ascontiguousarray(self.sigma, dtype=np.float64)
        if self.eps_r.shape != self.sigma.shape or self.eps_r.ndim != 2:
            raise SimulationError(GEOMETRY_ERROR, "eps_r and sigma must be 2D arrays of equal shape")
        if self.pml_cells < 8:
            raise SimulationError(GEOMETRY_ERROR, f"pml_cells must be >= 8, got {self.pml_cells}")
        nx, ny = self.eps_r.shape
        if min(nx, ny) - 2 * self.pml_cells <= 2 * self.pml_cells:
            raise SimulationError(GEOMETRY_ERROR, "grid interior must exceed twice the absorbing layer")
        if not np.all(self.eps_r >= 1.0):
            raise SimulationError(GEOMETRY_ERROR, "every eps_r cell must be >= 1")
        if not np.all(self.sigma >= 0.0):
            raise SimulationError(GEOMETRY_ERROR, "every sigma cell must be >= 0")
        if self.dt_s <= 0 or self.n_steps < 1:
            raise SimulationError(GEOMETRY_ERROR, "dt_s and n_steps must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.eps_r.shape[0]), int(self.eps_r.shape[1]))

    @property
    def surface_row(self) -> int:
        """First grid row inside the wall."""

        return self.pml_cells + self.air_gap_cells

    @property
    def interior_x(self) -> range:
        return range(self.pml_cells, self.shape[0] - self.pml_cells)

    @property
    def interior_y(self) -> range:
        return range(self.pml_cells, self.shape[1] - self.pml_cells)

    @property
    def time_window_s(self) -> float:
        return self.dt_s * self.n_steps

    def wall_view(self, array: np.ndarray | None = None) -> np.ndarray:
        """Slice of ``array`` (default ``eps_r``) covering the wall cells only."""

        target = self.eps_r if array is None else array
        nx_wall = int(round(self.width_m / self.cell_m))
        ny_wall = int(round(self.depth_m / self.cell_m))
        x0 = self.pml_cells
        y0 = self.surface_row
        return target[x0 : x0 + nx_wall, y0 : y0 + ny_wall]


@dataclass(frozen=True, slots=True)
class SourceSpec:
    """Point soft source and point receiver, positions given as grid ``(x, y)`` indices."""

    center_freq_hz: float
    delay_s: float
    tx_pos: tuple[int, int]
    rx_pos: tuple[int, int]
    kind: str = "ricker"
    amplitude: float = 1.0

    def __post_init__(self) -> None:
        if self.kind != "ricker":
            raise SimulationError(GEOMETRY_ERROR, f"unsupported source waveform: {self.kind}")
        if self.center_freq_hz <= 0:
            raise SimulationError(GEOMETRY_ERROR, "center frequency must be positive")
        if self.delay_s < 1.0 / self.center_freq_hz - 1e-18:
            raise SimulationError(GEOMETRY_ERROR, "source delay must be at least one period")


@dataclass(frozen=True, slots=True)
class AScan:
    """Receiver Ez time series; sample ``k`` is taken at ``t0_s + k * dt_s``."""

    samples: np.ndarray
    dt_s: float
    t0_s: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return self.t0_s + self.dt_s * np.arange(self.samples.shape[0], dtype=np.float64)


@dataclass(slots=True)
class BScan:
    """Radargram ``data[time, trace]`` over ``time_window_s``."""

    data: np.ndarray
    time_window_s: float
    trace_step_m: float
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise NetworkError(SHAPE_ERROR, f"B-scan must be 2D, got shape {self.data.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.data.shape[0]), int(self.data.shape[1]))

    @property
    def dt_s(self) -> float:
        return self.time_window_s / self.data.shape[0]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))
