"""Power delay profile synthesis, thresholding and peak analysis."""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.signal import find_peaks
from scipy.signal.windows import gaussian

from raytrace_calibrator.raytrace import MIN_PATH_POWER_DBM, PathList

FLOOR_DBM = -200.0
DEFAULT_BIN_WIDTH_NS = 1.0

# Significance window below the strongest bin
PEAK_WINDOW_DB = 25.0
PEAK_MIN_PROMINENCE_DB = 1.0
PEAK_PROMINENCE_FRACTION = 0.05
PEAK_MIN_SEPARATION_BINS = 3
PEAK_MIN_SEPARATION_NS = 15.0

# Sounder's maximum measurable delay
MAX_EXTENT_NS = 4094.0

# Threshold rule: max(noise floor + 5 dB, peak - 25 dB)
NOISE_MARGIN_DB = 5.0

# Gaussian delay smoothing kernel extent, in standard deviations
SMOOTHING_TRUNCATE = 3.0


class EmptyProfileError(ValueError):
    """Raised when a profile would carry no energy above its floor."""


@dataclass(frozen=True, eq=False)
class PowerDelayProfile:
    """Per-bin received power on a uniform delay grid.

    Bin k sits at delay t0_ns + k * bin_width_ns. Bins without energy hold floor_dbm.
    """

    t0_ns: float
    bin_width_ns: float
    power_dbm: NDArray[np.float64]
    floor_dbm: float = FLOOR_DBM

    def __post_init__(self) -> None:
        if not self.bin_width_ns > 0:
            raise ValueError(f"Bin width must be positive: {self.bin_width_ns}")
        power = np.array(self.power_dbm, dtype=float)
        if power.ndim != 1 or power.size == 0:
            raise EmptyProfileError("Profile needs at least one bin")
        if np.any(~np.isfinite(power)) or np.any(power < self.floor_dbm):
            raise ValueError("Profile bins must be finite and not below the floor")
        if not np.any(power > self.floor_dbm):
            raise EmptyProfileError("Profile has no bin above the floor")
        power.setflags(write=False)
        object.__setattr__(self, "power_dbm", power)

    @property
    def n_bins(self) -> int:
        return int(self.power_dbm.size)

    @property
    def delays_ns(self) -> NDArray[np.float64]:
        return self.t0_ns + self.bin_width_ns * np.arange(self.n_bins)

    @property
    def max_power_dbm(self) -> float:
        return float(self.power_dbm.max())

    @property
    def argmax(self) -> int:
        """Index of the strongest bin (first one on ties)."""
        return int(np.argmax(self.power_dbm))

    @property
    def max_delay_ns(self) -> float:
        """Delay of the strongest bin."""
        return self.t0_ns + self.bin_width_ns * self.argmax

    @property
    def occupied(self) -> NDArray[np.bool_]:
        """Mask of bins carrying energy."""
        return self.power_dbm > self.floor_dbm

    def linear_mw(self) -> NDArray[np.float64]:
        """Per-bin linear power in mW; floor bins contribute zero."""
        return np.where(self.occupied, 10.0 ** (self.power_dbm / 10.0), 0.0)

    def total_power_mw(self) -> float:
        return float(self.linear_mw().sum())


@dataclass(frozen=True)
class Peak:
    """A significant local maximum of a profile."""

    delay_ns: float
    power_dbm: float
    prominence_db: float
    bin_index: int


@dataclass(frozen=True, eq=False)
class PeakList:
    """Significant peaks sorted by ascending delay, with their source profile."""

    peaks: tuple[Peak, ...]
    profile: PowerDelayProfile = field(repr=False)

    def __len__(self) -> int:
        return len(self.peaks)

    @property
    def delays_ns(self) -> NDArray[np.float64]:
        return np.array([p.delay_ns for p in self.peaks], dtype=float)


def _to_dbm(linear_mw: NDArray[np.float64], floor_dbm: float) -> NDArray[np.float64]:
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(linear_mw)
    return np.where(linear_mw > 0, np.maximum(db, floor_dbm), floor_dbm)


def synthesize_pdp(
    paths: PathList,
    bin_width_ns: float = DEFAULT_BIN_WIDTH_NS,
    cutoff_dbm: float = MIN_PATH_POWER_DBM,
    floor_dbm: float = FLOOR_DBM,
) -> PowerDelayProfile:
    """Build a PDP by summing path powers non-coherently into delay bins.

    Bins are anchored at integer multiples of the bin width; each path lands in
    the nearest bin. The grid has one empty bin of padding on each side.

    Args:
        paths: Multipath components
        bin_width_ns: Delay resolution in ns
        cutoff_dbm: Paths weaker than this are ignored
        floor_dbm: Value for bins without energy

    Returns:
        Power delay profile

    Raises:
        EmptyProfileError: No path at or above the cutoff
    """
    if not bin_width_ns > 0:
        raise ValueError(f"Bin width must be positive: {bin_width_ns}")

    kept = [p for p in paths.paths if p.power_dbm >= cutoff_dbm]
    if not kept:
        raise EmptyProfileError("No path above the power cutoff")

    delays = np.array([p.delay_ns for p in kept], dtype=float)
    powers = np.array([p.power_dbm for p in kept], dtype=float)
    bins = np.rint(delays / bin_width_ns).astype(np.int64)

    k0 = int(bins.min()) - 1
    n_bins = int(bins.max()) - k0 + 2
    linear = np.zeros(n_bins)
    np.add.at(linear, bins - k0, 10.0 ** (powers / 10.0))

    return PowerDelayProfile(
        t0_ns=k0 * bin_width_ns,
        bin_width_ns=bin_width_ns,
        power_dbm=_to_dbm(linear, floor_dbm),
        floor_dbm=floor_dbm,
    )


def smooth_pdp(p: PowerDelayProfile, sigma_ns: float) -> PowerDelayProfile:
    """Spread each bin's power with a Gaussian delay kernel.

    Models a locally averaged PDP. The kernel is truncated at 3 sigma and
    normalized, so total power is kept; the grid grows by the kernel
    half-width on each side.

    Args:
        p: Profile to smooth
        sigma_ns: Kernel standard deviation in ns; 0 returns p unchanged

    Returns:
        Smoothed profile on the same bin width
    """
    if sigma_ns < 0:
        raise ValueError(f"Smoothing width must not be negative: {sigma_ns}")
    if sigma_ns == 0:
        return p

    half = math.ceil(SMOOTHING_TRUNCATE * sigma_ns / p.bin_width_ns)
    kernel = gaussian(2 * half + 1, sigma_ns / p.bin_width_ns)
    kernel /= kernel.sum()
    linear = np.convolve(p.linear_mw(), kernel, mode="full")
    return PowerDelayProfile(
        t0_ns=p.t0_ns - half * p.bin_width_ns,
        bin_width_ns=p.bin_width_ns,
        power_dbm=_to_dbm(linear, p.floor_dbm),
        floor_dbm=p.floor_dbm,
    )


def threshold_pdp(p: PowerDelayProfile, noise_floor_dbm: float) -> PowerDelayProfile:
    """Zero out bins below max(noise floor + 5 dB, peak - 25 dB).

    Args:
        p: Profile to threshold
        noise_floor_dbm: Measurement noise floor in dBm

    Returns:
        Thresholded profile on the same grid

    Raises:
        EmptyProfileError: Every bin falls below the threshold
    """
    threshold = max(noise_floor_dbm + NOISE_MARGIN_DB, p.max_power_dbm - PEAK_WINDOW_DB)
    power = np.where(p.power_dbm >= threshold, p.power_dbm, p.floor_dbm)
    if not np.any(power > p.floor_dbm):
        raise EmptyProfileError(
            f"All bins fall below the {threshold:.1f} dBm threshold"
        )
    return PowerDelayProfile(p.t0_ns, p.bin_width_ns, power, p.floor_dbm)


def detect_peaks(
    p: PowerDelayProfile,
    window_db: float = PEAK_WINDOW_DB,
    min_separation_ns: float = PEAK_MIN_SEPARATION_NS,
) -> PeakList:
    """Find the significant multipath peaks of a profile.

    A peak is kept when it is a local maximum within window_db of the strongest
    bin, is at least PEAK_MIN_SEPARATION_BINS from any stronger retained peak,
    and has prominence >= max(5% of window_db, 1 dB). Survivors are then taken in
    descending power and kept only if min_separation_ns from all kept peaks.

    Args:
        p: Profile to analyze
        window_db: Significance window below the maximum
        min_separation_ns: Minimum delay gap between returned peaks

    Returns:
        Peaks sorted by delay
    """
    power = p.power_dbm
    min_prominence = max(PEAK_PROMINENCE_FRACTION * window_db, PEAK_MIN_PROMINENCE_DB)

    # Pad with the floor so first/last bins can qualify as local maxima
    padded = np.concatenate(([p.floor_dbm], power, [p.floor_dbm]))
    indices, props = find_peaks(
        padded,
        height=p.max_power_dbm - window_db,
        distance=PEAK_MIN_SEPARATION_BINS,
        prominence=min_prominence,
    )
    indices = indices - 1

    order = sorted(range(len(indices)), key=lambda i: (-power[indices[i]], indices[i]))
    kept: list[int] = []
    for i in order:
        delay = p.t0_ns + p.bin_width_ns * indices[i]
        if all(
            abs(delay - (p.t0_ns + p.bin_width_ns * indices[j])) >= min_separation_ns
            for j in kept
        ):
            kept.append(i)

    peaks = tuple(
        Peak(
            delay_ns=float(p.t0_ns + p.bin_width_ns * indices[i]),
            power_dbm=float(power[indices[i]]),
            prominence_db=float(props["prominences"][i]),
            bin_index=int(indices[i]),
        )
        for i in sorted(kept, key=lambda i: indices[i])
    )
    return PeakList(peaks=peaks, profile=p)


def normalize_peak_powers(
    peaks: PeakList, p: PowerDelayProfile, window_db: float = PEAK_WINDOW_DB
) -> list[float]:
    """Map peak powers linearly from [max - window_db, max] dB onto [0, 1].

    Args:
        peaks: Peaks to normalize
        p: Profile the peaks came from (its maximum maps to 1)
        window_db: Width of the mapped window

    Returns:
        Normalized powers in peak order
    """
    reference = p.max_power_dbm
    return [
        float(np.clip((peak.power_dbm - (reference - window_db)) / window_db, 0.0, 1.0))
        for peak in peaks.peaks
    ]


def apply_offset(p: PowerDelayProfile, offset_db: float) -> PowerDelayProfile:
    """Add a uniform dB offset to every occupied bin."""
    power = np.where(p.occupied, np.maximum(p.power_dbm + offset_db, p.floor_dbm), p.floor_dbm)
    return PowerDelayProfile(p.t0_ns, p.bin_width_ns, power, p.floor_dbm)


def resample(p: PowerDelayProfile, t0_ns: float, bin_width_ns: float) -> PowerDelayProfile:
    """Re-bin a profile onto the grid t0_ns + k * bin_width_ns (any integer k).

    Each occupied bin's linear power goes to the nearest target bin, so total
    power is conserved. A grid already congruent with the target is returned as is.

    Args:
        p: Profile to re-bin
        t0_ns: Any point of the target grid
        bin_width_ns: Target bin width

    Returns:
        Profile covering p's support on the target grid
    """
    phase = (p.t0_ns - t0_ns) / bin_width_ns
    if np.isclose(p.bin_width_ns, bin_width_ns, rtol=1e-12, atol=0.0) and np.isclose(
        phase, round(phase), rtol=0.0, atol=1e-9
    ):
        return p

    occupied = p.occupied
    delays = p.delays_ns[occupied]
    linear = p.linear_mw()[occupied]
    bins = np.rint((delays - t0_ns) / bin_width_ns).astype(np.int64)
    k0 = int(bins.min()) - 1
    out = np.zeros(int(bins.max()) - k0 + 2)
    np.add.at(out, bins - k0, linear)
    return PowerDelayProfile(
        t0_ns=t0_ns + k0 * bin_width_ns,
        bin_width_ns=bin_width_ns,
        power_dbm=_to_dbm(out, p.floor_dbm),
        floor_dbm=p.floor_dbm,
    )


def clamp_extent(p: PowerDelayProfile, max_extent_ns: float = MAX_EXTENT_NS) -> PowerDelayProfile:
    """Drop bins more than max_extent_ns after the first occupied bin."""
    first = int(np.argmax(p.occupied))
    last = first + int(np.floor(max_extent_ns / p.bin_width_ns + 1e-9))
    if last >= p.n_bins - 1:
        return p
    return PowerDelayProfile(p.t0_ns, p.bin_width_ns, p.power_dbm[: last + 1], p.floor_dbm)
