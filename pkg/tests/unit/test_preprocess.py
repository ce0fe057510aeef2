from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from gprwi.config import PreprocessSettings
from gprwi.errors import ARGUMENT_ERROR, DEGENERATE_SCAN, DEGENERATE_TRACE, FORMAT_ERROR, SignalError
from gprwi.models import BScan
from gprwi.preprocess import (
    RawRadargram,
    highpass_filter,
    normalize,
    prepare_radargram,
    read_radargram,
    segment,
    time_zero_calibrate,
)
from gprwi.storage import write_bscan

DT = 1e-11
TIMES = np.arange(1000) * DT


def _tone(freq_hz: float, traces: int = 3) -> RawRadargram:
    column = np.sin(2 * np.pi * freq_hz * TIMES)
    return RawRadargram(data=np.tile(column[:, None], (1, traces)), dt_s=DT)


def _db(before: np.ndarray, after: np.ndarray) -> float:
    return 20 * np.log10(np.sqrt(np.mean(after**2)) / np.sqrt(np.mean(before**2)))


def test_highpass_removes_low_frequency_tone() -> None:
    raw = _tone(1e8)

    filtered = highpass_filter(raw, 5e8)

    assert _db(raw.data, filtered.data) <= -20.0


def test_highpass_keeps_high_frequency_tone() -> None:
    raw = _tone(1e9)

    filtered = highpass_filter(raw, 5e8)

    assert abs(_db(raw.data, filtered.data)) <= 1.0


def test_highpass_rejects_cutoff_above_nyquist() -> None:
    with pytest.raises(SignalError) as excinfo:
        highpass_filter(_tone(1e9), 1e11)

    assert excinfo.value.code == ARGUMENT_ERROR


def test_time_zero_moves_spike_to_first_sample() -> None:
    data = np.zeros((100, 5))
    data[30, :] = 1.0

    calibrated = time_zero_calibrate(RawRadargram(data=data, dt_s=DT))

    assert np.all(calibrated.data[0] == 1.0)
    assert np.all(calibrated.data[-30:] == 0.0)


def test_time_zero_uses_median_break() -> None:
    data = np.zeros((100, 3))
    for column, row in enumerate((10, 30, 50)):
        data[row, column] = 1.0

    calibrated = time_zero_calibrate(RawRadargram(data=data, dt_s=DT))

    assert calibrated.data[0, 1] == 1.0
    assert calibrated.data[20, 2] == 1.0


def test_time_zero_is_idempotent() -> None:
    rng = np.random.default_rng(3)
    data = rng.normal(scale=0.01, size=(200, 6))
    data[40:50] += np.sin(np.linspace(0, np.pi, 10))[:, None]
    raw = RawRadargram(data=data, dt_s=DT)

    once = time_zero_calibrate(raw)
    twice = time_zero_calibrate(once)

    assert np.array_equal(once.data, twice.data)


def test_time_zero_on_spread_breaks_keeps_every_break_and_is_idempotent() -> None:
    data = np.zeros((100, 3))
    for column, row in enumerate((10, 30, 50)):
        data[row, column] = 1.0

    once = time_zero_calibrate(RawRadargram(data=data, dt_s=DT))
    twice = time_zero_calibrate(once)

    assert once.data[0, 0] == 1.0
    assert once.data[0, 1] == 1.0
    assert once.data[20, 2] == 1.0
    assert np.array_equal(once.data, twice.data)


def test_time_zero_reports_dead_trace() -> None:
    data = np.ones((10, 3))
    data[:, 1] = 0.0

    with pytest.raises(SignalError) as excinfo:
        time_zero_calibrate(RawRadargram(data=data, dt_s=DT))

    assert excinfo.value.code == DEGENERATE_TRACE
    assert excinfo.value.details == {"traces": [1]}


def test_segment_shapes_and_offsets() -> None:
    raw = RawRadargram(data=np.arange(600.0).reshape(300, 2).repeat(50, axis=1), dt_s=DT)

    pieces = segment(raw, 40, np.random.default_rng(0), 8)

    assert len(pieces) == 8
    for piece in pieces:
        assert piece.shape == (255, 40)
        assert 0 <= piece.meta["offset"] <= 60
        assert piece.time_window_s == pytest.approx(raw.time_window_s)


def test_segment_is_seeded() -> None:
    raw = RawRadargram(data=np.random.default_rng(1).normal(size=(64, 90)), dt_s=DT)

    first = segment(raw, 40, np.random.default_rng(5), 4, n_samples=32)
    second = segment(raw, 40, np.random.default_rng(5), 4, n_samples=32)

    assert [p.meta["offset"] for p in first] == [p.meta["offset"] for p in second]


def test_segment_needs_enough_traces() -> None:
    raw = RawRadargram(data=np.ones((64, 10)), dt_s=DT)

    with pytest.raises(SignalError) as excinfo:
        segment(raw, 40, np.random.default_rng(0), 1)

    assert excinfo.value.code == ARGUMENT_ERROR


def test_normalize_scales_peak_to_one() -> None:
    scan = BScan(data=np.array([[2.0, -4.0], [1.0, 0.5]]), time_window_s=2e-9, trace_step_m=0.004)

    normalised = normalize(scan)

    assert np.max(np.abs(normalised.data)) == 1.0
    assert normalised.data[0, 1] == -1.0
    assert np.array_equal(normalize(normalised).data, normalised.data)


def test_normalize_rejects_all_zero_scan() -> None:
    with pytest.raises(SignalError) as excinfo:
        normalize(BScan(data=np.zeros((4, 4)), time_window_s=4e-9, trace_step_m=0.004))

    assert excinfo.value.code == DEGENERATE_SCAN


def test_read_radargram_csv(tmp_path: Path) -> None:
    path = tmp_path / "field.csv"
    path.write_text("dt=2e-11\n1,2,3\n4,5,6\n7,8,9\n", encoding="utf-8")

    raw = read_radargram(path)

    assert raw.dt_s == 2e-11
    assert raw.data.shape == (3, 3)
    assert raw.device == "field.csv"


def test_read_radargram_rejects_missing_header(tmp_path: Path) -> None:
    path = tmp_path / "field.csv"
    path.write_text("1,2,3\n4,5,6\n", encoding="utf-8")

    with pytest.raises(SignalError) as excinfo:
        read_radargram(path)

    assert excinfo.value.code == FORMAT_ERROR


def test_read_radargram_bscan(tmp_path: Path) -> None:
    path = tmp_path / "scan.bscan"
    write_bscan(path, BScan(data=np.ones((10, 4)), time_window_s=10e-9, trace_step_m=0.004))

    raw = read_radargram(path)

    assert raw.dt_s == pytest.approx(1e-9)
    assert raw.n_traces == 4


def test_prepare_radargram_yields_normalised_segments() -> None:
    rng = np.random.default_rng(0)
    data = rng.normal(scale=0.05, size=(600, 120))
    data[50:60] += np.sin(2 * np.pi * 1e9 * TIMES[:10])[:, None] * 3.0
    raw = RawRadargram(data=data, dt_s=DT, device="device-a")
    settings = PreprocessSettings(segments_per_scan=3)

    pieces = prepare_radargram(raw, np.random.default_rng(1), settings)

    assert len(pieces) == 3
    for piece in pieces:
        assert piece.shape == (255, 40)
        assert np.max(np.abs(piece.data)) == pytest.approx(1.0)
        assert piece.meta["source"] == "device-a"
