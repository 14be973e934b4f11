"""Measured PDP ingestion and PDP CSV emission."""

from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd

from raytrace_calibrator.geo import LocalPosition
from raytrace_calibrator.pdp import (
    DEFAULT_BIN_WIDTH_NS,
    FLOOR_DBM,
    EmptyProfileError,
    PowerDelayProfile,
    threshold_pdp,
)

CSV_COLUMNS = ["delay_ns", "power_dbm"]

# Relative tolerance on delay spacing before a file is called non-uniform
_SPACING_RTOL = 1e-6


class MeasurementError(ValueError):
    """Raised when a measured-PDP file is malformed."""


@dataclass
class MeasuredLink:
    """One measured TX-RX link ready for calibration."""

    name: str
    profile: PowerDelayProfile
    tx: LocalPosition
    rx: LocalPosition
    scenario: Literal["LOS", "NLOS"] | None = None
    source: Path | None = None


def load_measured_pdp(
    path: Path | str,
    noise_floor_dbm: float | None = None,
    default_bin_width_ns: float = DEFAULT_BIN_WIDTH_NS,
) -> PowerDelayProfile:
    """Load a measured PDP CSV with header delay_ns,power_dbm.

    Args:
        path: CSV file path
        noise_floor_dbm: If given, apply the noise-floor / peak-window threshold
        default_bin_width_ns: Bin width assumed for single-row files

    Returns:
        Power delay profile on the file's grid

    Raises:
        MeasurementError: Missing file, wrong header, non-uniform or non-increasing delays
        EmptyProfileError: No rows, or nothing left above threshold
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError as e:
        raise MeasurementError(f"Measured PDP file not found: {path}") from e
    except pd.errors.EmptyDataError as e:
        raise MeasurementError(f"{path}: file is empty (expected header {CSV_COLUMNS})") from e
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise MeasurementError(f"{path}: cannot parse CSV: {e}") from e

    if [c.strip() for c in frame.columns] != CSV_COLUMNS:
        raise MeasurementError(
            f"{path}: expected header {','.join(CSV_COLUMNS)}, got {','.join(frame.columns)}"
        )
    if frame.empty:
        raise EmptyProfileError(f"{path}: no PDP rows")

    try:
        delays = frame.iloc[:, 0].to_numpy(dtype=float)
        power = frame.iloc[:, 1].to_numpy(dtype=float)
    except ValueError as e:
        raise MeasurementError(f"{path}: non-numeric value: {e}") from e
    if not (np.all(np.isfinite(delays)) and np.all(np.isfinite(power))):
        raise MeasurementError(f"{path}: values must be finite")

    bin_width = _uniform_spacing(path, delays, default_bin_width_ns)
    profile = PowerDelayProfile(
        t0_ns=float(delays[0]),
        bin_width_ns=bin_width,
        power_dbm=np.maximum(power, FLOOR_DBM),
    )
    if noise_floor_dbm is not None:
        profile = threshold_pdp(profile, noise_floor_dbm)
    return profile


def load_measured_link(
    name: str,
    path: Path | str,
    tx: LocalPosition,
    rx: LocalPosition,
    scenario: Literal["LOS", "NLOS"] | None = None,
    noise_floor_dbm: float | None = None,
    default_bin_width_ns: float = DEFAULT_BIN_WIDTH_NS,
) -> MeasuredLink:
    """Load one link's measured PDP together with its recorded positions."""
    profile = load_measured_pdp(path, noise_floor_dbm, default_bin_width_ns)
    return MeasuredLink(name, profile, tx, rx, scenario, Path(path))


def _uniform_spacing(path: Path, delays: np.ndarray, default_bin_width_ns: float) -> float:
    if delays.size == 1:
        return default_bin_width_ns
    steps = np.diff(delays)
    if np.any(steps <= 0):
        row = int(np.argmax(steps <= 0)) + 2
        raise MeasurementError(f"{path}: delays must be strictly increasing (row {row})")
    step = float(steps[0])
    if not np.allclose(steps, step, rtol=_SPACING_RTOL, atol=0.0):
        row = int(np.argmax(~np.isclose(steps, step, rtol=_SPACING_RTOL, atol=0.0))) + 2
        raise MeasurementError(f"{path}: delays are not uniformly spaced (row {row})")
    return step


def pdp_to_frame(p: PowerDelayProfile) -> pd.DataFrame:
    """Tabulate a profile, trimming leading and trailing empty bins.

    Interior empty bins are kept at the floor value so the grid stays uniform.
    """
    occupied = np.flatnonzero(p.occupied)
    lo, hi = int(occupied[0]), int(occupied[-1])
    return pd.DataFrame(
        {
            "delay_ns": p.delays_ns[lo : hi + 1],
            "power_dbm": p.power_dbm[lo : hi + 1],
        }
    )


def save_pdp_csv(p: PowerDelayProfile, path: Path | str) -> Path:
    """Write a profile in the measured-PDP CSV format.

    Args:
        p: Profile to write
        path: Output file path (parent directories are created)

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pdp_to_frame(p).to_csv(path, index=False, float_format="%.10f")
    return path
