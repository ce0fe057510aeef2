"""Radargram preprocessing: time-zero, high-pass, segmentation, normalisation."""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import fft

from .config import DEFAULT_N_SAMPLES, DEFAULT_TRACE_STEP_M, PreprocessSettings
from .errors import (
    ARGUMENT_ERROR,
    DEGENERATE_SCAN,
    DEGENERATE_TRACE,
    FORMAT_ERROR,
    IO_ERROR,
    GprwiError,
    SignalError,
)
from .fdtd import resample_samples
from .logging import get_logger
from .models import BScan
from .storage import read_bscan

__all__ = [
    "RawRadargram",
    "highpass_filter",
    "normalize",
    "prepare_radargram",
    "read_radargram",
    "segment",
    "time_zero_calibrate",
]

logger = get_logger(__name__)


@dataclass(frozen=True, slots=True)
class RawRadargram:
    """Measured or simulated radargram ``data[time, trace]`` sampled every ``dt_s``."""

    data: np.ndarray
    dt_s: float
    device: str = ""
    trace_step_m: float = DEFAULT_TRACE_STEP_M
    meta: dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] < 1:
            raise SignalError(ARGUMENT_ERROR, f"radargram must be a 2D [time, trace] array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise SignalError(ARGUMENT_ERROR, "radargram contains non-finite samples")
        if self.dt_s <= 0:
            raise SignalError(ARGUMENT_ERROR, f"sample interval must be positive, got {self.dt_s}")
        object.__setattr__(self, "data", data)

    @property
    def n_samples(self) -> int:
        return int(self.data.shape[0])

    @property
    def n_traces(self) -> int:
        return int(self.data.shape[1])

    @property
    def time_window_s(self) -> float:
        return self.dt_s * self.n_samples


def first_breaks(data: np.ndarray, threshold_frac: float) -> np.ndarray:
    peaks = np.max(np.abs(data), axis=0)
    dead = np.flatnonzero(peaks == 0.0)
    if dead.size:
        raise SignalError(
            DEGENERATE_TRACE,
            f"trace {int(dead[0])} is all zeros",
            details={"traces": dead.tolist()},
        )
    above = np.abs(data) >= threshold_frac * peaks[None, :]
    return np.argmax(above, axis=0)


def time_zero_calibrate(r: RawRadargram, threshold_frac: float = 0.2) -> RawRadargram:
    """Shift every trace up so the median first break lands on sample 0.

    A first break is the earliest sample reaching ``threshold_frac`` of the
    trace's peak magnitude. The lower median is used for an even trace count;
    vacated samples at the end are zero-filled.

    Traces are shifted by the median break, except that a trace breaking
    earlier is shifted only by its own break and so starts at sample 0. No
    break is cut off, which makes a second call a no-op.
    """

    if not 0.0 < threshold_frac < 1.0:
        raise SignalError(ARGUMENT_ERROR, f"threshold_frac must lie in (0, 1), got {threshold_frac}")
    breaks = first_breaks(r.data, threshold_frac)
    shift = int(np.sort(breaks)[(breaks.size - 1) // 2])
    if shift == 0:
        return r
    shifted = np.zeros_like(r.data)
    for column, own in enumerate(np.minimum(breaks, shift)):
        shifted[: r.n_samples - own, column] = r.data[own:, column]
    logger.debug("preprocess.time_zero.shift", extra={"context": {"shift": shift, "device": r.device}})
    return replace(r, data=shifted)


def highpass_mask(freqs: np.ndarray, cutoff_hz: float) -> np.ndarray:
    """Raised-cosine high-pass gain: 0 up to ``0.8 * cutoff``, 1 from ``1.2 * cutoff``."""

    low, high = 0.8 * cutoff_hz, 1.2 * cutoff_hz
    mask = np.ones_like(freqs)
    mask[freqs <= low] = 0.0
    ramp = (freqs > low) & (freqs < high)
    mask[ramp] = 0.5 * (1.0 - np.cos(np.pi * (freqs[ramp] - low) / (high - low)))
    return mask


def highpass_filter(r: RawRadargram, cutoff_hz: float) -> RawRadargram:
    """Zero-phase high-pass applied per trace in the frequency domain."""

    nyquist = 0.5 / r.dt_s
    if not 0 < cutoff_hz < nyquist:
        raise SignalError(
            ARGUMENT_ERROR,
            f"cutoff {cutoff_hz:.4g} Hz must lie below the Nyquist frequency {nyquist:.4g} Hz",
        )
    freqs = fft.rfftfreq(r.n_samples, r.dt_s)
    spectrum = fft.rfft(r.data, axis=0)
    spectrum *= highpass_mask(freqs, cutoff_hz)[:, None]
    return replace(r, data=fft.irfft(spectrum, n=r.n_samples, axis=0))


def segment(
    r: RawRadargram,
    width: int,
    rng: np.random.Generator,
    k: int,
    *,
    n_samples: int = DEFAULT_N_SAMPLES,
) -> list[BScan]:
    """Cut ``k`` windows of ``width`` contiguous traces at random offsets, resampled to ``n_samples`` rows."""

    if width < 1 or k < 1:
        raise SignalError(ARGUMENT_ERROR, f"width and k must be >= 1, got width={width} k={k}")
    if r.n_traces < width:
        raise SignalError(ARGUMENT_ERROR, f"radargram has {r.n_traces} traces, fewer than segment width {width}")
    offsets = rng.integers(0, r.n_traces - width + 1, size=k)
    segments = []
    for offset in offsets:
        start = int(offset)
        window = r.data[:, start : start + width]
        segments.append(
            BScan(
                data=resample_samples(window, n_samples),
                time_window_s=r.time_window_s,
                trace_step_m=r.trace_step_m,
                meta={"source": r.device, "offset": start},
            )
        )
    return segments


def normalize(b: BScan) -> BScan:
    peak = float(np.max(np.abs(b.data))) if b.data.size else 0.0
    if peak == 0.0:
        raise SignalError(DEGENERATE_SCAN, "cannot normalise an all-zero scan")
    return BScan(data=b.data / peak, time_window_s=b.time_window_s, trace_step_m=b.trace_step_m, meta=dict(b.meta))


def read_radargram(path: Path) -> RawRadargram:
    """Load a ``.bscan`` file, or a CSV whose first line is ``dt=<seconds>`` and whose rows are time samples."""

    source = Path(path)
    if source.suffix.lower() == ".bscan":
        scan = read_bscan(source)
        return RawRadargram(data=scan.data, dt_s=scan.dt_s, device=source.name, trace_step_m=scan.trace_step_m)
    try:
        text = source.read_text(encoding="utf-8")
    except OSError as exc:
        raise SignalError(IO_ERROR, f"unable to read {source}", details={"path": str(source)}) from exc
    header, _, body = text.partition("\n")
    key, sep, value = header.strip().partition("=")
    if key.strip() != "dt" or not sep:
        raise SignalError(FORMAT_ERROR, f"{source}: first line must be 'dt=<seconds>'", details={"path": str(source)})
    try:
        dt = float(value)
        data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise SignalError(FORMAT_ERROR, f"{source}: malformed radargram CSV", details={"path": str(source)}) from exc
    try:
        return RawRadargram(data=data, dt_s=dt, device=source.name)
    except GprwiError as exc:
        raise SignalError(FORMAT_ERROR, f"{source}: {exc.message}", details={"path": str(source)}) from exc


def prepare_radargram(
    raw: RawRadargram,
    rng: np.random.Generator,
    settings: PreprocessSettings | None = None,
    *,
    n_samples: int = DEFAULT_N_SAMPLES,
) -> list[BScan]:
    """Calibrate, filter, segment, and normalise one radargram into network-ready scans."""

    cfg = settings or PreprocessSettings()
    calibrated = time_zero_calibrate(raw, cfg.threshold_frac)
    filtered = highpass_filter(calibrated, cfg.cutoff_hz)
    pieces = segment(filtered, cfg.segment_width, rng, cfg.segments_per_scan, n_samples=n_samples)
    logger.info(
        "preprocess.radargram.done",
        extra={"context": {"device": raw.device, "traces": raw.n_traces, "segments": len(pieces)}},
    )
    return [normalize(piece) for piece in pieces]
