"""Temporal alignment of simulated and measured PDPs.

Shifts follow one sign convention throughout: shift_ns = tau_sim - tau_meas, so
apply_shift(sim, -shift_ns) moves the simulated profile onto the measured frame.
"""

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import NDArray
from scipy.signal import correlate

from raytrace_calibrator.pdp import PEAK_WINDOW_DB, PowerDelayProfile, resample

AlignmentMethod = Literal["max-peak", "multi-peak-correlation"]

DEFAULT_SEARCH_WINDOW_NS = 500.0
MIN_CORRELATION = 0.5
MIN_OVERLAP_BINS = 8


class UndefinedCorrelationError(ValueError):
    """Raised when no admissible shift gives a defined correlation coefficient."""


@dataclass(frozen=True)
class AlignmentResult:
    """Delay shift between two profiles and how it was found."""

    shift_ns: float
    method: AlignmentMethod
    correlation: float | None = None

    def __post_init__(self) -> None:
        if (self.method == "multi-peak-correlation") != (self.correlation is not None):
            raise ValueError("correlation is set exactly for multi-peak alignment")


def align_max_peak(sim: PowerDelayProfile, meas: PowerDelayProfile) -> AlignmentResult:
    """Align on the strongest bin of each profile.

    Args:
        sim: Simulated profile
        meas: Measured profile

    Returns:
        Shift tau_sim_max - tau_meas_max
    """
    return AlignmentResult(
        shift_ns=sim.max_delay_ns - meas.max_delay_ns,
        method="max-peak",
    )


def _lifted_db(p: PowerDelayProfile) -> NDArray[np.float64]:
    # Relative dB, clamped to the peak window and lifted so absent energy is 0
    relative = np.clip(p.power_dbm - p.max_power_dbm, -PEAK_WINDOW_DB, 0.0)
    return relative + PEAK_WINDOW_DB


def align_multi_peak(
    sim: PowerDelayProfile,
    meas: PowerDelayProfile,
    window_ns: float = DEFAULT_SEARCH_WINDOW_NS,
) -> AlignmentResult:
    """Find the integer-bin shift maximizing the dB-domain correlation.

    The simulated profile is first re-binned onto the measured grid. Both
    profiles are placed on one zero-padded frame wide enough for every shift
    in [-window_ns, +window_ns], and the Pearson coefficient is computed over
    that frame. Shifts whose grids overlap by fewer than MIN_OVERLAP_BINS are
    not considered. Ties go to the smaller |shift|, then the smaller shift.

    Args:
        sim: Simulated profile
        meas: Measured profile
        window_ns: Search half-width in ns

    Returns:
        Best shift and the correlation it achieves

    Raises:
        UndefinedCorrelationError: No shift with enough overlap, or a flat profile
    """
    if not window_ns > 0:
        raise ValueError(f"Search window must be positive: {window_ns}")

    width = meas.bin_width_ns
    sim = resample(sim, meas.t0_ns, width)
    a = _lifted_db(sim)
    b = _lifted_db(meas)
    n_sim, n_meas = a.size, b.size

    # Sim bin i sits at meas bin m + i before shifting, m - k + i after shift k
    m = int(round((sim.t0_ns - meas.t0_ns) / width))
    k_max = int(math.floor(window_ns / width + 1e-9))
    lo = min(0, m - k_max)
    hi = max(n_meas, m + k_max + n_sim)
    frame = hi - lo

    padded = np.zeros(frame)
    padded[-lo : -lo + n_meas] = b
    dots = correlate(padded, a, mode="valid", method="direct")

    ks = np.arange(-k_max, k_max + 1)
    dots = dots[m - ks - lo]

    mean_a = a.sum() / frame
    mean_b = b.sum() / frame
    var_a = float(np.dot(a, a)) / frame - mean_a**2
    var_b = float(np.dot(b, b)) / frame - mean_b**2
    if var_a <= 0.0 or var_b <= 0.0:
        raise UndefinedCorrelationError("A profile is flat over the correlation frame")
    corr = (dots / frame - mean_a * mean_b) / math.sqrt(var_a * var_b)

    overlap = np.minimum(n_meas, m - ks + n_sim) - np.maximum(0, m - ks)
    admissible = overlap >= MIN_OVERLAP_BINS
    if not admissible.any():
        raise UndefinedCorrelationError(
            f"No shift within ±{window_ns:g} ns overlaps by {MIN_OVERLAP_BINS} bins"
        )

    best = corr[admissible].max()
    ties = ks[admissible & (corr == best)]
    k = int(min(ties, key=lambda t: (abs(int(t)), int(t))))
    return AlignmentResult(
        shift_ns=k * width,
        method="multi-peak-correlation",
        correlation=float(np.clip(best, -1.0, 1.0)),
    )


def select_alignment(
    sim: PowerDelayProfile,
    meas: PowerDelayProfile,
    window_ns: float = DEFAULT_SEARCH_WINDOW_NS,
) -> AlignmentResult:
    """Use multi-peak alignment when it correlates above 0.5, else max-peak.

    An undefined correlation also falls back to max-peak alignment.
    """
    try:
        multi = align_multi_peak(sim, meas, window_ns)
    except UndefinedCorrelationError:
        return align_max_peak(sim, meas)
    if multi.correlation is not None and multi.correlation > MIN_CORRELATION:
        return multi
    return align_max_peak(sim, meas)


def apply_shift(p: PowerDelayProfile, shift_ns: float) -> PowerDelayProfile:
    """Translate a profile's grid origin by shift_ns, rounded to whole bins."""
    bins = round(shift_ns / p.bin_width_ns)
    if bins == 0:
        return p
    return PowerDelayProfile(
        t0_ns=p.t0_ns + bins * p.bin_width_ns,
        bin_width_ns=p.bin_width_ns,
        power_dbm=p.power_dbm,
        floor_dbm=p.floor_dbm,
    )
