from __future__ import annotations

import numpy as np
import pytest

from gprwi import traveltime
from gprwi.config import SPEED_OF_LIGHT, SimulationSettings
from gprwi.errors import ARGUMENT_ERROR, SimulationError
from gprwi.models import AScan, Layer, WallConfig
from gprwi.scene import SCENE_PRESETS


def test_two_way_time_matches_closed_form() -> None:
    assert traveltime.two_way_time(0.1, 4.0) == pytest.approx(2 * 0.1 * 2.0 / SPEED_OF_LIGHT)
    assert traveltime.two_way_time(0.15, 1.0) == pytest.approx(1.0006922855944561e-09)


def test_bistatic_time_reduces_to_normal_incidence() -> None:
    layers = [Layer(0.1, 4.0), Layer(0.05, 2.0)]

    expected = traveltime.two_way_time(0.1, 4.0) + traveltime.two_way_time(0.05, 2.0)

    assert traveltime.bistatic_two_way_time(layers, 0.0, 0.0) == pytest.approx(expected)


def test_bistatic_time_in_air_is_straight_path() -> None:
    offset, height = 0.04, 0.01

    t = traveltime.bistatic_two_way_time([], offset, height)

    assert t == pytest.approx(2 * np.hypot(offset / 2, height) / SPEED_OF_LIGHT)


def test_offset_lengthens_the_path() -> None:
    layers = [Layer(0.2, 5.0)]

    assert traveltime.bistatic_two_way_time(layers, 0.04, 0.01) > traveltime.bistatic_two_way_time(layers, 0.0, 0.01)


def test_envelope_peak_finds_wavelet_delay() -> None:
    dt = 1e-11
    t = np.arange(1000) * dt
    delay = 3.217e-9
    a = (np.pi * 1e9 * (t - delay)) ** 2
    trace = (1 - 2 * a) * np.exp(-a)

    assert traveltime.envelope_peak_time(trace, dt) == pytest.approx(delay, abs=2 * dt)


def test_envelope_window_restricts_the_pick() -> None:
    dt = 1e-11
    t = np.arange(1000) * dt

    def burst(delay: float) -> np.ndarray:
        a = (np.pi * 1e9 * (t - delay)) ** 2
        return (1 - 2 * a) * np.exp(-a)

    trace = burst(2e-9) + 0.5 * burst(7e-9)

    pick = traveltime.envelope_peak_time(trace, dt, window_s=(5e-9, 9e-9))

    assert pick == pytest.approx(7e-9, abs=3 * dt)


def test_envelope_rejects_short_trace() -> None:
    with pytest.raises(SimulationError) as excinfo:
        traveltime.envelope_peak_time(np.zeros(2), 1e-11)

    assert excinfo.value.code == ARGUMENT_ERROR


def test_antenna_height_snaps_to_grid() -> None:
    assert traveltime.antenna_height_on_grid(SimulationSettings(cell_m=0.002)) == pytest.approx(0.009)
    assert traveltime.antenna_height_on_grid(SimulationSettings(cell_m=0.01)) == pytest.approx(0.005)


def test_sweep_rejects_unknown_parameter() -> None:
    with pytest.raises(SimulationError):
        traveltime.sweep("frequency", [1.0])  # type: ignore[arg-type]


def test_normal_incidence_lag_removes_slant_excess() -> None:
    layers = [Layer(0.1, 4.0)]
    offset, height = 0.04, 0.009
    slant = traveltime.bistatic_two_way_time(layers, offset, height) - traveltime.bistatic_two_way_time([], offset, height)

    corrected = traveltime.normal_incidence_lag(slant, layers, offset, height)

    assert slant < traveltime.two_way_time(0.1, 4.0)
    assert corrected == pytest.approx(traveltime.two_way_time(0.1, 4.0))


def test_normal_incidence_lag_is_identity_at_zero_offset() -> None:
    assert traveltime.normal_incidence_lag(1.5e-9, [Layer(0.1, 4.0)], 0.0, 0.0) == pytest.approx(1.5e-9)


@pytest.mark.slow
@pytest.mark.parametrize("thickness", [0.05, 0.10, 0.15])
def test_slab_lag_matches_two_way_time(thickness: float) -> None:
    points = traveltime.sweep("eps_r", [2.0, 4.0, 6.0], thickness_m=thickness, settings=SimulationSettings())

    for point in points:
        assert point.expected_lag_s == pytest.approx(traveltime.two_way_time(thickness, point.value))
        assert point.normal_lag_s == pytest.approx(point.expected_lag_s, rel=0.05)
        assert point.amplitude > 0


@pytest.mark.slow
def test_lag_grows_with_permittivity() -> None:
    points = traveltime.sweep("eps_r", [2.0, 3.0, 4.0, 5.0, 6.0, 7.0], thickness_m=0.10, settings=SimulationSettings())

    lags = [point.normal_lag_s for point in points]

    assert all(later > earlier for earlier, later in zip(lags, lags[1:]))


@pytest.mark.slow
def test_thicker_slab_delays_the_echo() -> None:
    points = traveltime.sweep("thickness", [0.06, 0.09, 0.12], eps_r=3.0, settings=SimulationSettings())

    lags = [point.normal_lag_s for point in points]

    assert lags[0] < lags[1] < lags[2]
    assert lags[2] - lags[0] == pytest.approx(traveltime.two_way_time(0.06, 3.0), rel=0.10)


@pytest.mark.slow
def test_conductivity_attenuates_without_moving_the_echo() -> None:
    settings = SimulationSettings()

    lossless, lossy = traveltime.sweep("sigma", [0.0, 0.05], thickness_m=0.10, eps_r=4.0, settings=settings)

    one_sample = settings.time_window_s / settings.n_samples
    assert abs(lossy.normal_lag_s - lossless.normal_lag_s) <= one_sample
    assert lossy.amplitude <= 0.9 * lossless.amplitude


@pytest.mark.slow
def test_first_interface_echo_of_preset_three() -> None:
    settings = SimulationSettings()
    wall = SCENE_PRESETS["scene3"]
    first = wall.layers[0]
    height = traveltime.antenna_height_on_grid(settings)

    air = traveltime.center_ascan(WallConfig(layers=()), settings)
    half_space = traveltime.center_ascan(WallConfig(layers=(Layer(settings.depth_m, first.eps_r),)), settings)
    full = traveltime.center_ascan(wall, settings)
    top = AScan(half_space.samples - air.samples, air.dt_s, air.t0_s)
    below = AScan(full.samples - half_space.samples, air.dt_s, air.t0_s)

    t_top = traveltime.envelope_peak_time(top.samples, top.dt_s, top.t0_s)
    guess = traveltime.bistatic_two_way_time([first], settings.antenna_offset_m, height) - traveltime.bistatic_two_way_time(
        [], settings.antenna_offset_m, height
    )
    lag = traveltime.echo_lag(top, below, window_s=(t_top + 0.75 * guess, t_top + 1.25 * guess))
    normal = traveltime.normal_incidence_lag(lag, [first], settings.antenna_offset_m, height)

    assert normal == pytest.approx(0.835e-9, rel=0.10)
