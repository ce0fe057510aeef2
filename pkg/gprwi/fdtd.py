"""2D TMz finite-difference time-domain solver with a convolutional PML.

Field layout on the Yee grid (``x`` lateral, ``y`` depth):

* ``ez[i, j]`` at nodes ``(i, j)``, shape ``(nx, ny)``; the outermost ring is
  held at zero and terminates the absorbing layer.
* ``hx[i, j]`` at ``(i, j + 1/2)``, shape ``(nx, ny - 1)``.
* ``hy[i, j]`` at ``(i + 1/2, j)``, shape ``(nx - 1, ny)``.

One step updates H from the curl of E, then E from the curl of H, then adds
the soft source at the transmitter node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import constants

from .config import SimulationSettings
from .errors import ARGUMENT_ERROR, GEOMETRY_ERROR, STABILITY_VIOLATION, SimulationError
from .logging import get_logger
from .metrics import record_operation
from .models import AScan, BScan, SimGrid, SourceSpec, WallConfig
from .scene import rasterize

__all__ = [
    "FdtdSolver",
    "FieldState",
    "UpdateCoefficients",
    "acquisition_positions",
    "resample_samples",
    "resample_trace",
    "ricker_wavelet",
    "run_ascan",
    "run_bscan",
    "step_fields",
]

logger = get_logger(__name__)

C0 = constants.c
EPS0 = constants.epsilon_0
MU0 = constants.mu_0
ETA0 = math.sqrt(MU0 / EPS0)


def ricker_wavelet(t: float | np.ndarray, f: float, delay: float) -> float | np.ndarray:
    """Ricker wavelet ``(1 - 2 a) exp(-a)`` with ``a = (pi f (t - delay))**2``; peak 1 at ``t = delay``."""

    if f <= 0:
        raise SimulationError(ARGUMENT_ERROR, "Ricker frequency must be positive")
    a = (np.pi * f * (np.asarray(t, dtype=np.float64) - delay)) ** 2
    value = (1.0 - 2.0 * a) * np.exp(-a)
    if np.ndim(value) == 0:
        return float(value)
    return value


@dataclass(slots=True)
class FieldState:
    """Field and auxiliary CPML arrays for one run."""

    ez: np.ndarray
    hx: np.ndarray
    hy: np.ndarray
    psi_ez_x: np.ndarray
    psi_ez_y: np.ndarray
    psi_hx_y: np.ndarray
    psi_hy_x: np.ndarray

    @classmethod
    def zeros(cls, grid: SimGrid) -> "FieldState":
        nx, ny = grid.shape
        return cls(
            ez=np.zeros((nx, ny)),
            hx=np.zeros((nx, ny - 1)),
            hy=np.zeros((nx - 1, ny)),
            psi_ez_x=np.zeros((nx - 2, ny - 2)),
            psi_ez_y=np.zeros((nx - 2, ny - 2)),
            psi_hx_y=np.zeros((nx, ny - 1)),
            psi_hy_x=np.zeros((nx - 1, ny)),
        )

    def peak(self) -> float:
        return float(np.max(np.abs(self.ez)))


def _grading(positions: np.ndarray, n_nodes: int, pml: int) -> np.ndarray:
    """Normalised depth into the absorbing layer (0 inside, 1 at the outer wall)."""

    low = pml - positions
    high = positions - (n_nodes - 1 - pml)
    return np.clip(np.maximum(low, high), 0.0, None) / pml


def _cpml_coefficients(depth: np.ndarray, sigma_max: float, order: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    # kappa = 1 and alpha = 0, so c reduces to b - 1
    sigma = sigma_max * depth**order
    b = np.exp(-sigma * dt / EPS0)
    return b, b - 1.0


@dataclass(frozen=True, slots=True)
class UpdateCoefficients:
    """Precomputed material and CPML update factors for one grid."""

    ca: np.ndarray
    cb: np.ndarray
    dt_mu: float
    inv_dx: float
    be_x: np.ndarray
    ce_x: np.ndarray
    be_y: np.ndarray
    ce_y: np.ndarray
    bh_x: np.ndarray
    ch_x: np.ndarray
    bh_y: np.ndarray
    ch_y: np.ndarray
    dt: float
    blowup_threshold: float
    check_interval: int

    @classmethod
    def from_grid(cls, grid: SimGrid, settings: SimulationSettings | None = None) -> "UpdateCoefficients":
        sim = settings or SimulationSettings()
        nx, ny = grid.shape
        dt = grid.dt_s
        pml = grid.pml_cells

        eps = EPS0 * grid.eps_r[1:-1, 1:-1]
        loss = grid.sigma[1:-1, 1:-1] * dt / (2.0 * eps)
        ca = (1.0 - loss) / (1.0 + loss)
        cb = (dt / eps) / (1.0 + loss)

        thickness = pml * grid.cell_m
        sigma_max = -(sim.pml_order + 1) * math.log(sim.pml_reflection) / (2.0 * ETA0 * thickness)

        e_x = np.arange(1, nx - 1, dtype=np.float64)
        e_y = np.arange(1, ny - 1, dtype=np.float64)
        h_x = np.arange(nx - 1, dtype=np.float64) + 0.5
        h_y = np.arange(ny - 1, dtype=np.float64) + 0.5
        be_x, ce_x = _cpml_coefficients(_grading(e_x, nx, pml), sigma_max, sim.pml_order, dt)
        be_y, ce_y = _cpml_coefficients(_grading(e_y, ny, pml), sigma_max, sim.pml_order, dt)
        bh_x, ch_x = _cpml_coefficients(_grading(h_x, nx, pml), sigma_max, sim.pml_order, dt)
        bh_y, ch_y = _cpml_coefficients(_grading(h_y, ny, pml), sigma_max, sim.pml_order, dt)

        return cls(
            ca=ca,
            cb=cb,
            dt_mu=dt / MU0,
            inv_dx=1.0 / grid.cell_m,
            be_x=be_x[:, None],
            ce_x=ce_x[:, None],
            be_y=be_y[None, :],
            ce_y=ce_y[None, :],
            bh_x=bh_x[:, None],
            ch_x=ch_x[:, None],
            bh_y=bh_y[None, :],
            ch_y=ch_y[None, :],
            dt=dt,
            blowup_threshold=sim.blowup_threshold,
            check_interval=max(1, sim.check_interval),
        )


def step_fields(
    grid: SimGrid,
    state: FieldState,
    source: SourceSpec,
    step_index: int,
    coeffs: UpdateCoefficients | None = None,
) -> FieldState:
    """Advance ``state`` by one leapfrog step in place and return it.

    Raises ``StabilityViolation`` when the Ez peak crosses the blow-up
    threshold; the check runs every ``check_interval`` steps and on the last.
    """

    if step_index >= grid.n_steps:
        raise SimulationError(ARGUMENT_ERROR, f"step {step_index} beyond run length {grid.n_steps}")
    c = coeffs or UpdateCoefficients.from_grid(grid)
    ez, hx, hy = state.ez, state.hx, state.hy

    dez_dy = (ez[:, 1:] - ez[:, :-1]) * c.inv_dx
    state.psi_hx_y *= c.bh_y
    state.psi_hx_y += c.ch_y * dez_dy
    hx -= c.dt_mu * (dez_dy + state.psi_hx_y)

    dez_dx = (ez[1:, :] - ez[:-1, :]) * c.inv_dx
    state.psi_hy_x *= c.bh_x
    state.psi_hy_x += c.ch_x * dez_dx
    hy += c.dt_mu * (dez_dx + state.psi_hy_x)

    dhy_dx = (hy[1:, 1:-1] - hy[:-1, 1:-1]) * c.inv_dx
    dhx_dy = (hx[1:-1, 1:] - hx[1:-1, :-1]) * c.inv_dx
    state.psi_ez_x *= c.be_x
    state.psi_ez_x += c.ce_x * dhy_dx
    state.psi_ez_y *= c.be_y
    state.psi_ez_y += c.ce_y * dhx_dy
    ez[1:-1, 1:-1] = c.ca * ez[1:-1, 1:-1] + c.cb * (dhy_dx - dhx_dy + state.psi_ez_x - state.psi_ez_y)

    if source.amplitude != 0.0:
        t = (step_index + 1) * c.dt
        ez[source.tx_pos] += source.amplitude * ricker_wavelet(t, source.center_freq_hz, source.delay_s)

    if step_index % c.check_interval == 0 or step_index == grid.n_steps - 1:
        peak = state.peak()
        if not math.isfinite(peak) or peak > c.blowup_threshold:
            raise SimulationError(
                STABILITY_VIOLATION,
                f"field magnitude {peak:.3g} exceeded {c.blowup_threshold:.3g} at step {step_index}",
                details={"step": step_index, "peak": peak, "dt_s": grid.dt_s},
            )
    return state


def _check_position(grid: SimGrid, pos: tuple[int, int], label: str) -> None:
    x, y = pos
    if x not in grid.interior_x or y not in grid.interior_y:
        raise SimulationError(
            GEOMETRY_ERROR,
            f"{label} position {pos} lies outside the grid interior",
            details={label: list(pos)},
        )


@dataclass(slots=True)
class FdtdSolver:
    """One A-scan simulation; owns its field state exclusively."""

    grid: SimGrid
    source: SourceSpec
    settings: SimulationSettings = field(default_factory=SimulationSettings)
    track_peaks: bool = False
    peaks: list[float] = field(default_factory=list)

    def run(self) -> AScan:
        _check_position(self.grid, self.source.tx_pos, "tx")
        _check_position(self.grid, self.source.rx_pos, "rx")
        if self.grid.dt_s > self.grid.cell_m / (C0 * math.sqrt(2.0)):
            logger.warning(
                "fdtd.courant.exceeded",
                extra={"context": {"dt_s": self.grid.dt_s, "limit_s": self.grid.cell_m / (C0 * math.sqrt(2.0))}},
            )

        coeffs = UpdateCoefficients.from_grid(self.grid, self.settings)
        state = FieldState.zeros(self.grid)
        samples = np.empty(self.grid.n_steps, dtype=np.float64)
        rx = self.source.rx_pos
        with np.errstate(over="ignore", invalid="ignore"):
            for n in range(self.grid.n_steps):
                step_fields(self.grid, state, self.source, n, coeffs)
                samples[n] = state.ez[rx]
                if self.track_peaks:
                    self.peaks.append(state.peak())

        record_operation("ascan")
        logger.debug("fdtd.ascan.done", extra={"context": {"steps": self.grid.n_steps, "tx": self.source.tx_pos}})
        return AScan(samples=samples, dt_s=self.grid.dt_s, t0_s=self.grid.dt_s)


def run_ascan(grid: SimGrid, source: SourceSpec, settings: SimulationSettings | None = None) -> AScan:
    """Simulate the receiver Ez trace over the grid's full time window."""

    return FdtdSolver(grid, source, settings or SimulationSettings()).run()


def resample_samples(samples: np.ndarray, n_out: int) -> np.ndarray:
    """Linearly resample along axis 0 onto ``n_out`` uniformly spaced times.

    Output sample ``j`` sits at ``(j + 1) / n_out`` of the window, so the last
    output coincides with the last input and ``n_out == len`` is the identity.
    """

    if n_out < 2:
        raise SimulationError(ARGUMENT_ERROR, f"n_out must be >= 2, got {n_out}")
    data = np.asarray(samples, dtype=np.float64)
    n_in = data.shape[0]
    if n_in == n_out:
        return data.copy()
    positions = (np.arange(1, n_out + 1, dtype=np.float64) * n_in) / n_out - 1.0
    source_index = np.arange(n_in, dtype=np.float64)
    if data.ndim == 1:
        return np.interp(positions, source_index, data)
    flat = data.reshape(n_in, -1)
    out = np.empty((n_out, flat.shape[1]), dtype=np.float64)
    for column in range(flat.shape[1]):
        out[:, column] = np.interp(positions, source_index, flat[:, column])
    return out.reshape((n_out, *data.shape[1:]))


def resample_trace(a: AScan, n_out: int) -> np.ndarray:
    return resample_samples(a.samples, n_out)


def acquisition_positions(grid: SimGrid, settings: SimulationSettings) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """Grid indices of every (tx, rx) pair, centred on the wall width."""

    cell = grid.cell_m
    span = (settings.n_traces - 1) * settings.trace_step_m
    first_mid = settings.width_m / 2.0 - span / 2.0
    row = grid.surface_row - max(1, int(round(settings.antenna_height_m / cell)))

    def column(x_m: float) -> int:
        return grid.pml_cells + int(math.floor(x_m / cell + 1e-6))

    pairs = []
    for index in range(settings.n_traces):
        mid = first_mid + index * settings.trace_step_m
        tx = (column(mid - settings.antenna_offset_m / 2.0), row)
        rx = (column(mid + settings.antenna_offset_m / 2.0), row)
        _check_position(grid, tx, "tx")
        _check_position(grid, rx, "rx")
        if abs(abs(rx[0] - tx[0]) * cell - settings.antenna_offset_m) > cell + 1e-9:
            raise SimulationError(GEOMETRY_ERROR, "antenna separation cannot be represented on this grid")
        pairs.append((tx, rx))
    return pairs


def run_bscan(config: WallConfig, acq: SimulationSettings | None = None) -> BScan:
    """Simulate a B-scan of ``config``: one A-scan per antenna position, resampled to ``n_samples``.

    A wall without grains is laterally uniform, so a single A-scan is
    simulated and repeated across all columns.
    """

    settings = acq or SimulationSettings()
    grid = rasterize(config, settings=settings)
    pairs = acquisition_positions(grid, settings)
    delay = 1.0 / settings.center_freq_hz

    def simulate(tx: tuple[int, int], rx: tuple[int, int]) -> np.ndarray:
        source = SourceSpec(center_freq_hz=settings.center_freq_hz, delay_s=delay, tx_pos=tx, rx_pos=rx)
        return resample_trace(run_ascan(grid, source, settings), settings.n_samples)

    data = np.empty((settings.n_samples, settings.n_traces), dtype=np.float64)
    homogeneous = not config.grains
    if homogeneous:
        trace = simulate(*pairs[len(pairs) // 2])
        data[:] = trace[:, None]
    else:
        for index, (tx, rx) in enumerate(pairs):
            data[:, index] = simulate(tx, rx)

    record_operation("bscan")
    logger.debug(
        "fdtd.bscan.done",
        extra={"context": {"seed": config.seed, "layers": len(config.layers), "homogeneous": homogeneous}},
    )
    meta: dict[str, Any] = {
        "source": "fdtd",
        "seed": config.seed,
        "cell_m": grid.cell_m,
        "n_steps": grid.n_steps,
        "dt_s": grid.dt_s,
    }
    return BScan(data=data, time_window_s=grid.time_window_s, trace_step_m=settings.trace_step_m, meta=meta)
