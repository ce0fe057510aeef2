"""Analytic travel times, echo picking, and single-slab parameter sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Literal, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.signal import hilbert

from .config import SPEED_OF_LIGHT, SimulationSettings
from .errors import ARGUMENT_ERROR, SimulationError
from .fdtd import acquisition_positions, run_ascan
from .logging import get_logger
from .models import AScan, Layer, SourceSpec, WallConfig
from .scene import rasterize

__all__ = [
    "SweepPoint",
    "antenna_height_on_grid",
    "bistatic_two_way_time",
    "center_ascan",
    "echo_lag",
    "envelope_peak_time",
    "isolate_echoes",
    "normal_incidence_lag",
    "sweep",
    "two_way_time",
]

logger = get_logger(__name__)

SweepParameter = Literal["eps_r", "thickness", "sigma"]


def two_way_time(d: float, eps: float) -> float:
    """Normal-incidence two-way time through a slab of thickness ``d``."""

    return 2.0 * d * math.sqrt(eps) / SPEED_OF_LIGHT


def bistatic_two_way_time(layers: Sequence[Layer], offset_m: float, height_m: float) -> float:
    """Two-way time from transmitter to the bottom of ``layers`` and back to the receiver.

    Antennas sit ``height_m`` above the wall, ``offset_m`` apart. The ray
    obeys Snell's law at every interface; an empty stack gives the surface echo.
    """

    half = offset_m / 2.0
    legs = [(height_m, 1.0), *((layer.thickness_m, layer.eps_r) for layer in layers)]

    def spread(p: float) -> float:
        total = 0.0
        for thickness, eps in legs:
            sin_t = p / math.sqrt(eps)
            total += thickness * sin_t / math.sqrt(1.0 - sin_t * sin_t)
        return total - half

    p = 0.0 if half <= 0 else brentq(spread, 0.0, 1.0 - 1e-12, xtol=1e-15)
    one_way = 0.0
    for thickness, eps in legs:
        sin_t = p / math.sqrt(eps)
        one_way += thickness * math.sqrt(eps) / math.sqrt(1.0 - sin_t * sin_t)
    return 2.0 * one_way / SPEED_OF_LIGHT


def envelope_peak_time(
    samples: np.ndarray,
    dt_s: float,
    t0_s: float = 0.0,
    *,
    window_s: tuple[float, float] | None = None,
) -> float:
    """Time of the Hilbert-envelope maximum, refined with a parabola through its neighbours."""

    trace = np.asarray(samples, dtype=np.float64)
    if trace.ndim != 1 or trace.size < 3:
        raise SimulationError(ARGUMENT_ERROR, "envelope picking needs a 1D trace of at least 3 samples")
    envelope = np.abs(hilbert(trace))
    lo, hi = 0, trace.size
    if window_s is not None:
        lo = max(0, int(math.floor((window_s[0] - t0_s) / dt_s)))
        hi = min(trace.size, int(math.ceil((window_s[1] - t0_s) / dt_s)) + 1)
        if hi - lo < 1:
            raise SimulationError(ARGUMENT_ERROR, f"empty picking window {window_s}")
    k = lo + int(np.argmax(envelope[lo:hi]))
    shift = 0.0
    if 0 < k < trace.size - 1:
        left, mid, right = envelope[k - 1], envelope[k], envelope[k + 1]
        denom = left - 2.0 * mid + right
        if denom < 0:
            shift = 0.5 * (left - right) / denom
    return t0_s + (k + shift) * dt_s


def echo_lag(early: AScan, late: AScan, *, window_s: tuple[float, float] | None = None) -> float:
    """Envelope-peak delay of ``late`` relative to ``early``."""

    t_early = envelope_peak_time(early.samples, early.dt_s, early.t0_s)
    t_late = envelope_peak_time(late.samples, late.dt_s, late.t0_s, window_s=window_s)
    return t_late - t_early


def normal_incidence_lag(lag_s: float, layers: Sequence[Layer], offset_m: float, height_m: float) -> float:
    """Move a lag measured between two bistatic echoes to the zero-offset lag.

    Both picks travel slant paths. Their extra length over the vertical path
    is ray traced for the known stack and removed, leaving the lag a
    coincident antenna pair would see.
    """

    slant = bistatic_two_way_time(layers, offset_m, height_m) - bistatic_two_way_time([], offset_m, height_m)
    vertical = sum(two_way_time(layer.thickness_m, layer.eps_r) for layer in layers)
    return lag_s - (slant - vertical)


def antenna_height_on_grid(settings: SimulationSettings) -> float:
    """Effective antenna height once the source node and wall surface are snapped to cells."""

    rows = max(1, int(round(settings.antenna_height_m / settings.cell_m)))
    return (rows - 0.5) * settings.cell_m


def center_ascan(config: WallConfig, settings: SimulationSettings) -> AScan:
    """Raw-resolution A-scan at the central antenna position."""

    grid = rasterize(config, settings=settings)
    tx, rx = acquisition_positions(grid, settings)[settings.n_traces // 2]
    source = SourceSpec(center_freq_hz=settings.center_freq_hz, delay_s=1.0 / settings.center_freq_hz, tx_pos=tx, rx_pos=rx)
    return run_ascan(grid, source, settings)


def isolate_echoes(layer: Layer, settings: SimulationSettings) -> tuple[AScan, AScan]:
    """Surface echo and slab-bottom echo of a single layer.

    The surface echo is the half-space trace minus the empty-scene trace; the
    bottom echo is the slab trace minus the half-space trace. The half-space
    fills the wall depth and continues into the absorbing layer.
    """

    air = center_ascan(WallConfig(layers=()), settings)
    half_space = center_ascan(WallConfig(layers=(Layer(settings.depth_m, layer.eps_r),)), settings)
    slab = center_ascan(WallConfig(layers=(layer,)), settings)
    top = AScan(half_space.samples - air.samples, air.dt_s, air.t0_s)
    bottom = AScan(slab.samples - half_space.samples, air.dt_s, air.t0_s)
    return top, bottom


@dataclass(frozen=True, slots=True)
class SweepPoint:
    """One slab simulation.

    ``lag_s`` is the raw bistatic lag between the surface and bottom echoes,
    ``normal_lag_s`` the same lag moved to zero offset, and ``expected_lag_s``
    the normal-incidence two-way time through the slab.
    """

    value: float
    lag_s: float
    normal_lag_s: float
    expected_lag_s: float
    amplitude: float

    def as_row(self) -> list[str]:
        return [
            repr(self.value),
            repr(self.lag_s),
            repr(self.normal_lag_s),
            repr(self.expected_lag_s),
            repr(self.amplitude),
        ]


def sweep(
    parameter: SweepParameter,
    values: Iterable[float],
    *,
    thickness_m: float = 0.10,
    eps_r: float = 4.0,
    sigma: float | None = None,
    settings: SimulationSettings | None = None,
) -> list[SweepPoint]:
    """Vary one slab parameter with the others fixed and measure the bottom-echo lag and peak."""

    if parameter not in ("eps_r", "thickness", "sigma"):
        raise SimulationError(ARGUMENT_ERROR, f"unknown sweep parameter: {parameter}")
    base = settings or SimulationSettings()
    if sigma is not None:
        base = replace(base, layer_sigma=float(sigma))
    height = antenna_height_on_grid(base)

    points: list[SweepPoint] = []
    for value in values:
        sim = base
        layer = Layer(thickness_m, eps_r)
        if parameter == "eps_r":
            layer = Layer(thickness_m, float(value))
        elif parameter == "thickness":
            layer = Layer(float(value), eps_r)
        else:
            sim = replace(base, layer_sigma=float(value))
        top, bottom = isolate_echoes(layer, sim)
        lag = echo_lag(top, bottom)
        normal = normal_incidence_lag(lag, [layer], sim.antenna_offset_m, height)
        expected = two_way_time(layer.thickness_m, layer.eps_r)
        amplitude = float(np.max(np.abs(hilbert(bottom.samples))))
        points.append(
            SweepPoint(value=float(value), lag_s=lag, normal_lag_s=normal, expected_lag_s=expected, amplitude=amplitude)
        )
        logger.info(
            "traveltime.sweep.point",
            extra={"context": {"parameter": parameter, "value": float(value), "lag_s": normal, "expected_s": expected}},
        )
    return points
