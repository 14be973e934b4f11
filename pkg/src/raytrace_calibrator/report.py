"""Result files: calibration JSON, stage trace CSV, PDP comparison CSV and campaign summary."""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from raytrace_calibrator.align import DEFAULT_SEARCH_WINDOW_NS
from raytrace_calibrator.geo import LocalPosition, ProjectionCenter, unproject_to_geo
from raytrace_calibrator.loss import align_to_measurement
from raytrace_calibrator.optimizer import CalibrationResult
from raytrace_calibrator.pdp import FLOOR_DBM, PowerDelayProfile, resample

RESULT_FILE = "result.json"
TRACE_FILE = "trace.csv"
COMPARISON_FILE = "pdp_comparison.csv"
SUMMARY_FILE = "summary.md"

TRACE_COLUMNS = [
    "iteration",
    "endpoint",
    "stage",
    "cand_x",
    "cand_y",
    "l_peak",
    "l_unmatched",
    "l_shape",
    "l_distance",
    "total",
    "chosen",
]


@dataclass
class LinkReport:
    """Calibration outcome of one link plus the profiles needed to report it."""

    name: str
    result: CalibrationResult
    center: ProjectionCenter
    meas: PowerDelayProfile
    sim_before: PowerDelayProfile | None
    sim_after: PowerDelayProfile | None
    scenario: str | None = None
    window_ns: float = DEFAULT_SEARCH_WINDOW_NS
    ground_truth: tuple[LocalPosition, LocalPosition] | None = None

    @property
    def peak_power_diff_db_before(self) -> float | None:
        return _peak_power_diff(self.sim_before, self.meas)

    @property
    def peak_power_diff_db_after(self) -> float | None:
        return _peak_power_diff(self.sim_after, self.meas)

    @property
    def peak_delay_mismatch_ns_before(self) -> float | None:
        return _peak_delay_mismatch(self.sim_before, self.meas)

    @property
    def peak_delay_mismatch_ns_after(self) -> float | None:
        return _peak_delay_mismatch(self.sim_after, self.meas)

    @property
    def separation_m_before(self) -> float:
        return self.result.tx_initial.distance_to(self.result.rx_initial)

    @property
    def separation_m_after(self) -> float:
        return self.result.tx_star.distance_to(self.result.rx_star)

    def ground_truth_errors(self) -> dict[str, float] | None:
        """Horizontal distance of each endpoint to its true position, before and after."""
        if self.ground_truth is None:
            return None
        tx_true, rx_true = self.ground_truth
        result = self.result
        return {
            "tx_before_m": result.tx_initial.horizontal_distance_to(tx_true),
            "tx_after_m": result.tx_star.horizontal_distance_to(tx_true),
            "rx_before_m": result.rx_initial.horizontal_distance_to(rx_true),
            "rx_after_m": result.rx_star.horizontal_distance_to(rx_true),
        }


def _peak_power_diff(sim: PowerDelayProfile | None, meas: PowerDelayProfile) -> float | None:
    if sim is None:
        return None
    return abs(sim.max_power_dbm - meas.max_power_dbm)


def _peak_delay_mismatch(sim: PowerDelayProfile | None, meas: PowerDelayProfile) -> float | None:
    if sim is None:
        return None
    return sim.max_delay_ns - meas.max_delay_ns


def _position_entry(p: LocalPosition, center: ProjectionCenter) -> dict[str, Any]:
    geo = unproject_to_geo(p, center)
    return {
        "local": {"x_m": p.x_m, "y_m": p.y_m, "z_m": p.z_m},
        "geo": {
            "latitude_deg": geo.latitude_deg,
            "longitude_deg": geo.longitude_deg,
            "antenna_height_m": geo.antenna_height_m,
        },
    }


def _adjustment_entry(adjustment: tuple[float, float]) -> dict[str, float]:
    dx, dy = adjustment
    return {"dx_m": dx, "dy_m": dy, "norm_m": float(np.hypot(dx, dy))}


def build_result_document(report: LinkReport, config: dict[str, Any]) -> dict[str, Any]:
    """Assemble the result JSON document of one link.

    Args:
        report: Link outcome
        config: Full effective run configuration to embed

    Returns:
        JSON-ready document
    """
    result = report.result
    return {
        "link": report.name,
        "scenario": report.scenario,
        "initial_positions": {
            "tx": _position_entry(result.tx_initial, report.center),
            "rx": _position_entry(result.rx_initial, report.center),
        },
        "calibrated_positions": {
            "tx": _position_entry(result.tx_star, report.center),
            "rx": _position_entry(result.rx_star, report.center),
        },
        "adjustments": {
            "tx": _adjustment_entry(result.tx_adjustment),
            "rx": _adjustment_entry(result.rx_adjustment),
        },
        "tr_separation_m_before": report.separation_m_before,
        "tr_separation_m_after": report.separation_m_after,
        "loss_initial": result.initial_loss.total,
        "loss_final": result.final_loss.total,
        "components": {
            "initial": result.initial_loss.to_dict(),
            "final": result.final_loss.to_dict(),
        },
        "loss_reduction_pct": result.loss_reduction_pct,
        "peak_power_diff_db_before": report.peak_power_diff_db_before,
        "peak_power_diff_db_after": report.peak_power_diff_db_after,
        "peak_delay_mismatch_ns_before": report.peak_delay_mismatch_ns_before,
        "peak_delay_mismatch_ns_after": report.peak_delay_mismatch_ns_after,
        "iterations": result.iterations_used,
        "eval_count": result.eval_count,
        "converged": result.converged,
        "budget_exhausted": result.budget_exhausted,
        "ground_truth_error": report.ground_truth_errors(),
        "config": config,
    }


def trace_frame(result: CalibrationResult) -> pd.DataFrame:
    """One row per evaluated stage candidate, in evaluation order."""
    rows: list[dict[str, Any]] = []
    for it in result.iterations:
        for stage in it.stages:
            marked = False
            for candidate in stage.candidates:
                chosen = not marked and candidate.position == stage.chosen
                marked = marked or chosen
                loss = candidate.loss
                rows.append(
                    {
                        "iteration": it.iteration,
                        "endpoint": stage.endpoint,
                        "stage": stage.stage,
                        "cand_x": candidate.position.x_m,
                        "cand_y": candidate.position.y_m,
                        "l_peak": loss.l_peak,
                        "l_unmatched": loss.l_unmatched,
                        "l_shape": loss.l_shape,
                        "l_distance": loss.l_distance,
                        "total": loss.total,
                        "chosen": int(chosen),
                    }
                )
    return pd.DataFrame(rows, columns=TRACE_COLUMNS)


def comparison_frame(
    meas: PowerDelayProfile,
    sim_before: PowerDelayProfile | None,
    sim_after: PowerDelayProfile | None,
    window_ns: float = DEFAULT_SEARCH_WINDOW_NS,
) -> pd.DataFrame:
    """Measured profile next to the aligned simulated profiles before and after calibration.

    Every column is on the measured grid; bins without energy hold the floor value.
    """
    width = meas.bin_width_ns
    columns: dict[str, PowerDelayProfile | None] = {"meas_dbm": meas}
    for name, sim in (("sim_before_dbm", sim_before), ("sim_after_dbm", sim_after)):
        columns[name] = None if sim is None else align_to_measurement(sim, meas, window_ns)[0]

    present = [resample(p, meas.t0_ns, width) for p in columns.values() if p is not None]
    start = min(p.t0_ns for p in present)
    stop = max(p.t0_ns + width * (p.n_bins - 1) for p in present)
    n_bins = int(round((stop - start) / width)) + 1
    delays = start + width * np.arange(n_bins)

    data: dict[str, Any] = {"delay_ns": delays}
    for name, profile in columns.items():
        values = np.full(n_bins, FLOOR_DBM)
        if profile is not None:
            offset = int(round((profile.t0_ns - start) / width))
            values[offset : offset + profile.n_bins] = profile.power_dbm
        data[name] = values
    return pd.DataFrame(data)


def write_link_outputs(report: LinkReport, config: dict[str, Any], out_dir: Path) -> Path:
    """Write result JSON, trace CSV and comparison CSV of one link.

    Args:
        report: Link outcome
        config: Effective run configuration to embed
        out_dir: Directory to write into (created if missing)

    Returns:
        Path of the result JSON
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    result_path = out_dir / RESULT_FILE
    result_path.write_text(json.dumps(build_result_document(report, config), indent=2) + "\n")
    trace_frame(report.result).to_csv(out_dir / TRACE_FILE, index=False)
    comparison_frame(report.meas, report.sim_before, report.sim_after, report.window_ns).to_csv(
        out_dir / COMPARISON_FILE, index=False
    )
    return result_path


def _mean(values: list[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def _fmt(value: float | None, digits: int = 2) -> str:
    return "N/A" if value is None else f"{value:.{digits}f}"


def format_summary(reports: list[LinkReport]) -> str:
    """Markdown summary of a campaign, grouped by LOS / NLOS / all links."""
    groups = [
        ("LOS", [r for r in reports if r.scenario == "LOS"]),
        ("NLOS", [r for r in reports if r.scenario == "NLOS"]),
        ("All", reports),
    ]

    lines = [
        "# Calibration Summary",
        "",
        "| Group | Links | Loss reduction (%) | Peak power diff before (dB) "
        "| Peak power diff after (dB) | Improvement (dB) | TX adj. (m) | RX adj. (m) |",
        "|---|---|---|---|---|---|---|---|",
    ]
    for label, members in groups:
        if not members:
            continue
        before = _mean([r.peak_power_diff_db_before for r in members])
        after = _mean([r.peak_power_diff_db_after for r in members])
        improvement = before - after if before is not None and after is not None else None
        lines.append(
            f"| {label} | {len(members)} "
            f"| {_fmt(_mean([r.result.loss_reduction_pct for r in members]))} "
            f"| {_fmt(before)} | {_fmt(after)} | {_fmt(improvement)} "
            f"| {_fmt(_mean([float(np.hypot(*r.result.tx_adjustment)) for r in members]))} "
            f"| {_fmt(_mean([float(np.hypot(*r.result.rx_adjustment)) for r in members]))} |"
        )

    lines += [
        "",
        "## Links",
        "",
        "| Link | Scenario | Loss initial | Loss final | Reduction (%) | Converged | Evaluations |",
        "|---|---|---|---|---|---|---|",
    ]
    for r in reports:
        lines.append(
            f"| {r.name} | {r.scenario or '-'} | {r.result.initial_loss.total:.4f} "
            f"| {r.result.final_loss.total:.4f} | {r.result.loss_reduction_pct:.2f} "
            f"| {'yes' if r.result.converged else 'no'} | {r.result.eval_count} |"
        )
    return "\n".join(lines) + "\n"


def write_summary(reports: list[LinkReport], out_dir: Path) -> Path:
    """Write the campaign summary markdown into out_dir."""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / SUMMARY_FILE
    path.write_text(format_summary(reports))
    return path
