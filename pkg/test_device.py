"""器件採樣、狀態表與量化"""

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.stats import norm

from memseizure.device import (
    CONTINUOUS,
    DeviceInstance,
    DeviceParameters,
    build_states,
    mirror_offset,
    quantize,
    sample_device,
    sample_devices,
)
from memseizure.errors import InvalidParameterError


def test_mirror_offset_default_devices():
    assert mirror_offset(100, 2500) == pytest.approx(-7.6923e-4, rel=1e-4)
    assert mirror_offset(100, 2500) == pytest.approx(-2.0 / 2600.0, rel=1e-12)


def test_mirror_offset_rejects_non_positive():
    with pytest.raises(InvalidParameterError):
        mirror_offset(0, 2500)


def test_sigma_zero_returns_means():
    device = sample_device(DeviceParameters(), seed=7)
    assert device.r_on == 100.0
    assert device.r_off == 2500.0
    assert device.states == ()


def test_build_states_evenly_spaced():
    states = build_states(DeviceInstance(100.0, 2500.0), 4)
    assert len(states) == 4
    assert states[0] == pytest.approx(1 / 2500)
    assert states[-1] == pytest.approx(1 / 100)
    assert np.allclose(np.diff(states), (1 / 100 - 1 / 2500) / 3)


def test_build_states_overlapping_device():
    states = build_states(DeviceInstance(3000.0, 2000.0), 6)
    assert states == (1 / 3000, 1 / 2000)


def test_build_states_continuous_and_invalid():
    assert build_states(DeviceInstance(100.0, 2500.0), CONTINUOUS) == ()
    with pytest.raises(InvalidParameterError):
        build_states(DeviceInstance(100.0, 2500.0), 1)


def test_parameters_validation():
    with pytest.raises(ValidationError):
        DeviceParameters(n_states=1)
    with pytest.raises(ValidationError):
        DeviceParameters(sigma=-1.0)
    with pytest.raises(ValidationError):
        DeviceParameters(r_on_mean=3000.0, r_off_mean=2500.0)
    assert DeviceParameters(n_states="continuous").is_continuous


def test_quantize_nearest_and_ties():
    states = (0.0, 1.0, 2.0)
    assert quantize(0.4, states) == 0.0
    assert quantize(0.6, states) == 1.0
    # 中點取較低的狀態
    assert quantize(0.5, states) == 0.0
    assert quantize(1.5, states) == 1.0
    assert quantize(-3.0, states) == 0.0
    assert quantize(9.0, states) == 2.0


def test_quantize_continuous_clamps_to_bounds():
    assert quantize(0.5, (), bounds=(0.0, 1.0)) == 0.5
    assert quantize(1.5, (), bounds=(0.0, 1.0)) == 1.0
    assert quantize(-1.0, ()) == pytest.approx(1 / 2500)
    assert quantize(1.0, ()) == pytest.approx(1 / 100)
    assert quantize(3e-3, ()) == 3e-3


def test_sampling_is_deterministic_and_row_major():
    params = DeviceParameters(sigma=50.0)
    first = sample_devices(params, (3, 4), seed=11)
    second = sample_devices(params, (3, 4), seed=11)
    assert np.array_equal(first.r_on, second.r_on)
    assert np.array_equal(first.r_off, second.r_off)

    rng = np.random.default_rng(11)
    expected_on = rng.normal(100.0, 50.0, size=(3, 4))
    expected_off = rng.normal(2500.0, 100.0, size=(3, 4))
    assert np.array_equal(first.r_on, np.maximum(expected_on, params.r_min))
    assert np.array_equal(first.r_off, np.maximum(expected_off, params.r_min))


def test_large_sigma_clamped_to_r_min():
    params = DeviceParameters(sigma=5000.0)
    devices = sample_devices(params, (50, 50), seed=0)
    assert devices.r_on.min() >= params.r_min
    assert devices.r_off.min() >= params.r_min
    assert np.all(np.isfinite(devices.g_high))


def test_vectorized_quantize_matches_scalar():
    rng = np.random.default_rng(3)
    for n_states in (2, 4, 7, CONTINUOUS):
        params = DeviceParameters(sigma=800.0, n_states=n_states)
        devices = sample_devices(params, (6, 5), seed=int(rng.integers(1 << 30)))
        targets = rng.uniform(1 / 4000, 1 / 50, size=(6, 5))
        vectorized = devices.quantize_array(targets)
        for index in np.ndindex(devices.shape):
            device = devices.device(index)
            scalar = quantize(targets[index], device.states, (device.g_low, device.g_high))
            assert vectorized[index] == pytest.approx(scalar, rel=1e-12)


def test_state_table_matches_build_states():
    params = DeviceParameters(sigma=300.0, n_states=5)
    devices = sample_devices(params, (4, 4), seed=2)
    table = devices.state_table()
    assert table.shape == (4, 4, 5)
    for index in np.ndindex(devices.shape):
        states = devices.device(index).states
        assert np.allclose(table[index][:len(states)], states, rtol=1e-12)


def _clamped_moments(mean, std, floor):
    """max(X, floor) 的均值與標準差，X ~ N(mean, std²)"""
    alpha = (floor - mean) / std
    below, density = norm.cdf(alpha), norm.pdf(alpha)
    first = floor * below + mean * (1 - below) + std * density
    second = floor ** 2 * below + (mean ** 2 + std ** 2) * (1 - below) + std * (mean + floor) * density
    return first, np.sqrt(second - first ** 2)


def test_sample_statistics_match_distribution():
    params = DeviceParameters(sigma=100.0)
    devices = sample_devices(params, (100_000,), seed=5)
    # R_ON 約有 16% 落在 r_min 以下被夾住，所以和截斷後的常態分佈比較
    mean, std = _clamped_moments(100.0, 100.0, params.r_min)
    assert devices.r_on.mean() == pytest.approx(mean, abs=2.0)
    assert devices.r_on.std() == pytest.approx(std, abs=3.0)
    assert devices.r_off.mean() == pytest.approx(2500.0, abs=4.0)
    assert devices.r_off.std() == pytest.approx(200.0, abs=6.0)


def test_large_sigma_produces_overlap():
    devices = sample_devices(DeviceParameters(sigma=400.0), (100_000,), seed=6)
    assert np.mean(devices.r_on >= devices.r_off) > 0
    assert np.mean(devices.r_on >= devices.r_off) < 0.1
    assert np.mean(sample_devices(DeviceParameters(), (1000,), seed=6).r_on >= 2500.0) == 0


def test_quantize_default_device_states():
    states = build_states(DeviceInstance(100.0, 2500.0), 3)
    assert states == pytest.approx((4e-4, 5.2e-3, 1e-2), rel=1e-12)
    # 2.8e-3 與兩側狀態等距
    assert quantize(2.8e-3, states) == states[0]
    assert quantize(2.81e-3, states) == states[1]
    assert quantize(6e-3, build_states(DeviceInstance(100.0, 2500.0), 2)) == pytest.approx(1e-2)
    assert build_states(DeviceInstance(100.0, 100.0), 4) == pytest.approx((1e-2,))


def test_quantize_error_within_half_step():
    rng = np.random.default_rng(8)
    g_off, g_on = 1 / 2500, 1 / 100
    for n_states in range(2, 11):
        states = build_states(DeviceInstance(100.0, 2500.0), n_states)
        half_step = (g_on - g_off) / (2 * (n_states - 1))
        for g in rng.uniform(g_off, g_on, 200):
            result = quantize(g, states)
            assert result in states
            assert abs(result - g) <= half_step * (1 + 1e-9)
            assert quantize(result, states) == result
