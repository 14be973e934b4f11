"""Multi-component discrepancy between simulated and measured PDPs."""

import math
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from raytrace_calibrator.align import (
    DEFAULT_SEARCH_WINDOW_NS,
    AlignmentResult,
    apply_shift,
    select_alignment,
)
from raytrace_calibrator.pdp import (
    PEAK_WINDOW_DB,
    PeakList,
    PowerDelayProfile,
    detect_peaks,
    normalize_peak_powers,
    resample,
)

# Sentinels, ordered outage >> structural mismatch >> normal values
PEAK_MISMATCH_PENALTY = 10.0
OUTAGE_PENALTY = 100.0
DISJOINT_SHAPE_PENALTY = PEAK_WINDOW_DB**2


class LossWeights(BaseModel):
    """Weights and scales of the composite loss."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = Field(default=0.7, ge=0.0, le=1.0, description="Peak vs shape weight")
    beta: float = Field(default=0.05, ge=0.0, description="Regularizer weight")
    w_unmatched: float = Field(default=0.5, ge=0.0, description="Peak-count mismatch weight")
    tau_ref_ns: float = Field(default=500.0, gt=0, description="Delay decay of peak weights")
    t_norm_ns: float = Field(default=100.0, gt=0, description="Delay error scale")
    d_max_m: float = Field(default=10.0, gt=0, description="Adjustment scale in meters")


@dataclass(frozen=True)
class LossBreakdown:
    """Loss components and their weighted total.

    For non-outage breakdowns total = alpha*(l_peak + l_unmatched)
    + (1 - alpha)*l_shape + beta*l_distance. Outages carry zero peak and shape
    terms and total = OUTAGE_PENALTY + beta*l_distance.
    """

    l_peak: float
    l_unmatched: float
    l_shape: float
    l_distance: float
    total: float
    outage: bool = False
    alignment: AlignmentResult | None = None
    n_sim_peaks: int = 0
    n_meas_peaks: int = 0

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["alignment"] = asdict(self.alignment) if self.alignment is not None else None
        return data


def peak_matching_loss(sim_peaks: PeakList, meas_peaks: PeakList, weights: LossWeights) -> float:
    """Delay-weighted cost of matching each simulated peak to its closest measured peak.

    Every simulated peak is matched (non-exclusively) to the measured peak with
    the lowest combined delay/power cost, and the costs are averaged over the
    simulated peaks.

    Args:
        sim_peaks: Peaks of the aligned simulated profile
        meas_peaks: Peaks of the measured profile
        weights: Loss weights (tau_ref_ns, t_norm_ns)

    Returns:
        l_peak, or PEAK_MISMATCH_PENALTY when either list is empty
    """
    if len(sim_peaks) == 0 or len(meas_peaks) == 0:
        return PEAK_MISMATCH_PENALTY

    sim_tau = sim_peaks.delays_ns
    meas_tau = meas_peaks.delays_ns
    sim_p = np.array(normalize_peak_powers(sim_peaks, sim_peaks.profile))
    meas_p = np.array(normalize_peak_powers(meas_peaks, meas_peaks.profile))

    cost = (
        np.abs(sim_tau[:, None] - meas_tau[None, :]) / weights.t_norm_ns
        + np.abs(sim_p[:, None] - meas_p[None, :])
    )
    w = np.exp(-sim_tau / weights.tau_ref_ns)
    return float(np.sum(w * cost.min(axis=1)) / len(sim_peaks))


def unmatched_peaks_penalty(n_sim: int, n_meas: int, weights: LossWeights) -> float:
    """Penalty for differing peak counts: w_unmatched * |n_sim - n_meas| / max."""
    if n_sim < 0 or n_meas < 0:
        raise ValueError(f"Peak counts must be non-negative: {n_sim}, {n_meas}")
    larger = max(n_sim, n_meas)
    if larger == 0:
        return 0.0
    return weights.w_unmatched * abs(n_sim - n_meas) / larger


def shape_loss(
    sim: PowerDelayProfile, meas: PowerDelayProfile, window_db: float = PEAK_WINDOW_DB
) -> float:
    """Mean squared dB difference over the bins where either profile is significant.

    Each profile is normalized to a 0 dB maximum. A bin counts when either
    normalized value exceeds -window_db; values below the window (including
    absent energy) are clamped to -window_db.

    Args:
        sim: Aligned simulated profile
        meas: Measured profile
        window_db: Significance window

    Returns:
        l_shape, or window_db**2 when no bin is significant
    """
    width = meas.bin_width_ns
    sim = resample(sim, meas.t0_ns, width)
    offset = int(round((sim.t0_ns - meas.t0_ns) / width))

    lo = min(0, offset)
    hi = max(meas.n_bins, offset + sim.n_bins)
    sim_db = np.full(hi - lo, -window_db)
    meas_db = np.full(hi - lo, -window_db)
    sim_db[offset - lo : offset - lo + sim.n_bins] = np.maximum(
        sim.power_dbm - sim.max_power_dbm, -window_db
    )
    meas_db[-lo : -lo + meas.n_bins] = np.maximum(meas.power_dbm - meas.max_power_dbm, -window_db)

    region = (sim_db > -window_db) | (meas_db > -window_db)
    if not region.any():
        return window_db**2
    return float(np.mean((sim_db[region] - meas_db[region]) ** 2))


def distance_regularizer(d_tx: float, d_rx: float, weights: LossWeights) -> float:
    """(d_tx^2 + d_rx^2) / d_max^2 for adjustment distances in meters."""
    if d_tx < 0 or d_rx < 0:
        raise ValueError(f"Adjustment distances must be non-negative: {d_tx}, {d_rx}")
    return (d_tx**2 + d_rx**2) / weights.d_max_m**2


def combine_components(
    l_peak: float,
    l_unmatched: float,
    l_shape: float,
    l_distance: float,
    weights: LossWeights,
    *,
    alignment: AlignmentResult | None = None,
    n_sim_peaks: int = 0,
    n_meas_peaks: int = 0,
) -> LossBreakdown:
    """Weight the four components into a LossBreakdown."""
    total = (
        weights.alpha * (l_peak + l_unmatched)
        + (1.0 - weights.alpha) * l_shape
        + weights.beta * l_distance
    )
    return LossBreakdown(
        l_peak=l_peak,
        l_unmatched=l_unmatched,
        l_shape=l_shape,
        l_distance=l_distance,
        total=total,
        alignment=alignment,
        n_sim_peaks=n_sim_peaks,
        n_meas_peaks=n_meas_peaks,
    )


def outage_loss(l_distance: float, weights: LossWeights) -> LossBreakdown:
    """Breakdown for a candidate with no usable path."""
    return LossBreakdown(
        l_peak=0.0,
        l_unmatched=0.0,
        l_shape=0.0,
        l_distance=l_distance,
        total=OUTAGE_PENALTY + weights.beta * l_distance,
        outage=True,
    )


def align_to_measurement(
    sim: PowerDelayProfile,
    meas: PowerDelayProfile,
    window_ns: float = DEFAULT_SEARCH_WINDOW_NS,
) -> tuple[PowerDelayProfile, AlignmentResult]:
    """Re-bin a simulated profile onto the measured grid and shift it onto the measured frame.

    Returns:
        Aligned simulated profile and the alignment used
    """
    sim = resample(sim, meas.t0_ns, meas.bin_width_ns)
    alignment = select_alignment(sim, meas, window_ns)
    return apply_shift(sim, -alignment.shift_ns), alignment


def composite_loss(
    sim: PowerDelayProfile | None,
    meas: PowerDelayProfile,
    d_tx: float,
    d_rx: float,
    weights: LossWeights | None = None,
    window_ns: float = DEFAULT_SEARCH_WINDOW_NS,
) -> LossBreakdown:
    """Full loss of a simulated profile against the measurement.

    The simulated profile is re-binned onto the measured grid, aligned with
    select_alignment and shifted onto the measured frame before any component
    is evaluated.

    Args:
        sim: Simulated profile, or None for an outage
        meas: Measured profile
        d_tx: TX adjustment distance from its initial position in meters
        d_rx: RX adjustment distance from its initial position in meters
        weights: Loss weights (defaults when omitted)
        window_ns: Alignment search half-width

    Returns:
        Loss breakdown
    """
    weights = weights or LossWeights()
    l_distance = distance_regularizer(d_tx, d_rx, weights)
    if sim is None:
        return outage_loss(l_distance, weights)

    aligned, alignment = align_to_measurement(sim, meas, window_ns)

    sim_peaks = detect_peaks(aligned)
    meas_peaks = detect_peaks(meas)
    l_peak = peak_matching_loss(sim_peaks, meas_peaks, weights)
    l_unmatched = unmatched_peaks_penalty(len(sim_peaks), len(meas_peaks), weights)
    l_shape = shape_loss(aligned, meas)

    result = combine_components(
        l_peak,
        l_unmatched,
        l_shape,
        l_distance,
        weights,
        alignment=alignment,
        n_sim_peaks=len(sim_peaks),
        n_meas_peaks=len(meas_peaks),
    )
    if not math.isfinite(result.total):
        raise ValueError(f"Non-finite loss: {result}")
    return result
