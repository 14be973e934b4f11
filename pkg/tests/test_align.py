"""Tests for align module."""

import numpy as np
import pytest

from raytrace_calibrator.align import (
    MIN_CORRELATION,
    AlignmentResult,
    UndefinedCorrelationError,
    align_max_peak,
    align_multi_peak,
    apply_shift,
    select_alignment,
)
from raytrace_calibrator.pdp import FLOOR_DBM, PowerDelayProfile, apply_offset


def _random_profile(seed: int, n_bins: int = 150, t0_ns: float = 200.0) -> PowerDelayProfile:
    rng = np.random.default_rng(seed)
    values = rng.uniform(-95.0, -60.0, n_bins)
    values[rng.uniform(size=n_bins) < 0.3] = FLOOR_DBM
    values[int(rng.integers(0, n_bins))] = -55.0
    return PowerDelayProfile(t0_ns, 1.0, values)


def _spikes(t0_ns: float, n_bins: int, spikes: dict[int, float]) -> PowerDelayProfile:
    power = np.full(n_bins, FLOOR_DBM)
    for idx, value in spikes.items():
        power[idx] = value
    return PowerDelayProfile(t0_ns, 1.0, power)


def test_max_peak_identical_profiles() -> None:
    """Test that identical profiles need no shift."""
    pdp = _random_profile(1)
    result = align_max_peak(pdp, pdp)
    assert result.shift_ns == 0.0
    assert result.method == "max-peak"
    assert result.correlation is None


def test_max_peak_pure_translation() -> None:
    """Test that a measurement delayed by 37 ns gives shift -37 ns."""
    sim = _random_profile(2)
    meas = apply_shift(sim, 37.0)
    assert align_max_peak(sim, meas).shift_ns == pytest.approx(-37.0)


def test_max_peak_uses_strongest_not_first() -> None:
    """Test that the shift follows the maximum bins rather than first arrivals."""
    sim = _spikes(100.0, 80, {5: -80.0, 40: -62.0})
    meas = _spikes(90.0, 80, {2: -70.0, 60: -65.0})
    expected = (100.0 + sim.argmax) - (90.0 + meas.argmax)
    assert align_max_peak(sim, meas).shift_ns == pytest.approx(expected)
    assert expected == pytest.approx(-10.0)


def test_multi_peak_identical_profiles() -> None:
    """Test zero shift with unit correlation."""
    pdp = _random_profile(3)
    result = align_multi_peak(pdp, pdp)
    assert result.shift_ns == 0.0
    assert result.method == "multi-peak-correlation"
    assert result.correlation == pytest.approx(1.0)


def test_multi_peak_recovers_23_bins() -> None:
    """Test that a measurement 23 bins later is recovered exactly."""
    sim = _random_profile(4)
    meas = apply_shift(sim, 23.0)
    result = align_multi_peak(sim, meas, window_ns=100.0)
    assert result.shift_ns == -23.0
    assert result.correlation == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(100))
def test_multi_peak_exact_recovery(seed: int) -> None:
    """Test exact recovery of random translations within the window."""
    shift = int(np.random.default_rng(1000 + seed).integers(-400, 401))
    sim = _random_profile(seed)
    meas = apply_shift(sim, float(shift))
    result = align_multi_peak(sim, meas)
    assert result.shift_ns == -shift
    assert abs(result.shift_ns) <= 500.0


@pytest.mark.parametrize("seed", range(20))
def test_multi_peak_tolerates_noise(seed: int) -> None:
    """Test recovery within one bin under bounded 3 dB perturbations."""
    rng = np.random.default_rng(2000 + seed)
    shift = int(rng.integers(-60, 61))
    sim = _random_profile(seed)
    shifted = apply_shift(sim, float(shift))
    noisy = np.where(
        shifted.occupied,
        shifted.power_dbm + rng.uniform(-3.0, 3.0, shifted.n_bins),
        FLOOR_DBM,
    )
    meas = PowerDelayProfile(shifted.t0_ns, 1.0, noisy)
    result = align_multi_peak(sim, meas)
    assert abs(result.shift_ns + shift) <= 1.0


def test_multi_peak_resamples_simulation() -> None:
    """Test alignment of a simulated profile on a finer, offset grid."""
    meas = _random_profile(5, t0_ns=300.0)
    # Every other 0.5 ns bin empty; occupied ones land exactly on the 1 ns grid
    fine = np.full(2 * meas.n_bins, FLOOR_DBM)
    fine[::2] = meas.power_dbm
    sim = PowerDelayProfile(meas.t0_ns + 12.0, 0.5, fine)
    result = align_multi_peak(sim, meas)
    assert result.shift_ns == 12.0


def test_correlation_invariant_to_offsets() -> None:
    """Test that uniform dB offsets leave the coefficient unchanged."""
    sim = _random_profile(6)
    meas = apply_shift(_random_profile(7), 5.0)
    base = align_multi_peak(sim, meas)
    moved = align_multi_peak(apply_offset(sim, 9.0), apply_offset(meas, -4.0))
    assert moved.shift_ns == base.shift_ns
    assert moved.correlation == pytest.approx(base.correlation, abs=1e-9)


def test_short_overlap_is_undefined() -> None:
    """Test that profiles too short to overlap by 8 bins have no correlation."""
    sim = _spikes(0.0, 5, {2: -70.0})
    meas = _spikes(0.0, 5, {1: -70.0})
    with pytest.raises(UndefinedCorrelationError):
        align_multi_peak(sim, meas)


def test_non_positive_window() -> None:
    """Test that the search window must be positive."""
    pdp = _random_profile(8)
    with pytest.raises(ValueError, match="window"):
        align_multi_peak(pdp, pdp, window_ns=0.0)


def test_select_prefers_multi_peak() -> None:
    """Test that a clean shifted copy selects multi-peak with the exact shift."""
    sim = _random_profile(9)
    result = select_alignment(sim, apply_shift(sim, -15.0))
    assert result.method == "multi-peak-correlation"
    assert result.shift_ns == 15.0


def test_select_falls_back_on_low_correlation() -> None:
    """Test that a spike against a flat block selects max-peak alignment."""
    sim = PowerDelayProfile(0.0, 1.0, np.where(np.arange(50) == 20, -60.0, -100.0))
    meas = PowerDelayProfile(100.0, 1.0, np.full(30, -60.0))

    multi = align_multi_peak(sim, meas)
    assert multi.correlation is not None
    assert multi.correlation <= MIN_CORRELATION

    result = select_alignment(sim, meas)
    assert result.method == "max-peak"
    assert result.shift_ns == pytest.approx(20.0 - 100.0)


def test_select_falls_back_on_undefined_correlation() -> None:
    """Test that an undefined correlation selects max-peak alignment."""
    sim = _spikes(0.0, 5, {2: -70.0})
    meas = _spikes(10.0, 5, {1: -70.0})
    result = select_alignment(sim, meas)
    assert result.method == "max-peak"
    assert result.shift_ns == pytest.approx(2.0 - 11.0)


def test_apply_shift() -> None:
    """Test origin translation, rounding and the inverse property."""
    pdp = _random_profile(10)
    assert apply_shift(pdp, 0.0) is pdp
    moved = apply_shift(pdp, 10.0)
    assert moved.t0_ns == pdp.t0_ns + 10.0
    np.testing.assert_array_equal(moved.power_dbm, pdp.power_dbm)
    back = apply_shift(moved, -10.0)
    assert back.t0_ns == pdp.t0_ns
    np.testing.assert_array_equal(back.power_dbm, pdp.power_dbm)
    assert apply_shift(pdp, 2.4).t0_ns == pdp.t0_ns + 2.0


def test_alignment_result_correlation_rule() -> None:
    """Test that correlation is present exactly for multi-peak results."""
    with pytest.raises(ValueError):
        AlignmentResult(shift_ns=1.0, method="max-peak", correlation=0.9)
    with pytest.raises(ValueError):
        AlignmentResult(shift_ns=1.0, method="multi-peak-correlation")
