"""Tests for report module."""

import json
import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from raytrace_calibrator.geo import LocalPosition, ProjectionCenter
from raytrace_calibrator.loss import LossBreakdown
from raytrace_calibrator.optimizer import (
    CalibrationResult,
    Candidate,
    IterationTrace,
    OptimizerConfig,
    StageTrace,
    calibrate,
)
from raytrace_calibrator.pdp import FLOOR_DBM, PowerDelayProfile, synthesize_pdp
from raytrace_calibrator.raytrace import ImageMethodModel
from raytrace_calibrator.report import (
    COMPARISON_FILE,
    RESULT_FILE,
    SUMMARY_FILE,
    TRACE_COLUMNS,
    TRACE_FILE,
    LinkReport,
    build_result_document,
    comparison_frame,
    format_summary,
    trace_frame,
    write_link_outputs,
    write_summary,
)
from raytrace_calibrator.scene import Scene

CENTER = ProjectionCenter(40.6937, -73.9867)
TX0 = LocalPosition(0.0, 0.0, 10.0)
RX0 = LocalPosition(30.0, 40.0, 1.5)


def _loss(total: float) -> LossBreakdown:
    return LossBreakdown(
        l_peak=0.5 * total, l_unmatched=0.0, l_shape=total, l_distance=0.0, total=total
    )


def _result(converged: bool = True) -> CalibrationResult:
    a, b = RX0.offset(-2.5, 0.0), RX0.offset(1.0, -2.0)
    stage = StageTrace(
        stage="coarse",
        endpoint="RX",
        candidates=(Candidate(a, _loss(3.0)), Candidate(b, _loss(1.0)), Candidate(b, _loss(1.0))),
        chosen=b,
        chosen_loss=_loss(1.0),
        eval_count=2,
    )
    iteration = IterationTrace(iteration=1, tx=TX0.offset(3.0, 4.0), rx=b, loss=_loss(1.0))
    iteration.stages.append(stage)
    return CalibrationResult(
        tx_initial=TX0,
        rx_initial=RX0,
        tx_star=TX0.offset(3.0, 4.0),
        rx_star=b,
        initial_loss=_loss(4.0),
        final_loss=_loss(1.0),
        iterations=[iteration],
        eval_count=3,
        converged=converged,
    )


def _profile(t0_ns: float, values: list[float]) -> PowerDelayProfile:
    return PowerDelayProfile(t0_ns, 1.0, np.array(values))


def _report(
    name: str = "link", scenario: str | None = None, after: bool = True
) -> LinkReport:
    return LinkReport(
        name=name,
        result=_result(),
        center=CENTER,
        meas=_profile(100.0, [-60.0, -70.0, -80.0]),
        sim_before=_profile(120.0, [-80.0, -70.0, -85.0]),
        sim_after=_profile(105.0, [-61.0, -70.0, -80.0]) if after else None,
        scenario=scenario,
    )


def test_result_document_fields() -> None:
    """Test positions, adjustments, losses and link metrics in the result document."""
    doc = build_result_document(_report(scenario="LOS"), {"model": "builtin"})

    assert doc["link"] == "link"
    assert doc["scenario"] == "LOS"
    assert doc["initial_positions"]["rx"]["local"] == {"x_m": 30.0, "y_m": 40.0, "z_m": 1.5}
    tx_geo = doc["initial_positions"]["tx"]["geo"]
    assert tx_geo["latitude_deg"] == pytest.approx(40.6937, abs=1e-9)
    assert tx_geo["longitude_deg"] == pytest.approx(-73.9867, abs=1e-9)
    assert tx_geo["antenna_height_m"] == 10.0

    assert doc["adjustments"]["tx"] == {"dx_m": 3.0, "dy_m": 4.0, "norm_m": 5.0}
    assert doc["adjustments"]["rx"]["norm_m"] == pytest.approx(math.sqrt(5.0))
    assert doc["tr_separation_m_before"] == pytest.approx(math.sqrt(900 + 1600 + 8.5**2))

    assert doc["loss_initial"] == 4.0
    assert doc["loss_final"] == 1.0
    assert doc["loss_reduction_pct"] == pytest.approx(75.0)
    assert doc["components"]["final"]["l_shape"] == 1.0
    assert doc["components"]["final"]["alignment"] is None

    assert doc["peak_power_diff_db_before"] == pytest.approx(10.0)
    assert doc["peak_power_diff_db_after"] == pytest.approx(1.0)
    assert doc["peak_delay_mismatch_ns_before"] == pytest.approx(21.0)
    assert doc["peak_delay_mismatch_ns_after"] == pytest.approx(5.0)

    assert doc["iterations"] == 1
    assert doc["eval_count"] == 3
    assert doc["converged"] is True
    assert doc["budget_exhausted"] is False
    assert doc["ground_truth_error"] is None
    assert doc["config"] == {"model": "builtin"}
    json.dumps(doc)


def test_result_document_without_after_profile() -> None:
    """Test that a calibrated outage reports N/A-style nulls."""
    doc = build_result_document(_report(after=False), {})
    assert doc["peak_power_diff_db_after"] is None
    assert doc["peak_delay_mismatch_ns_after"] is None


def test_result_document_ground_truth_error() -> None:
    """Test the distance of each endpoint to its true position before and after."""
    report = _report()
    report.ground_truth = (TX0.offset(3.0, 0.0), RX0.offset(1.0, -2.0))
    errors = build_result_document(report, {})["ground_truth_error"]
    assert errors == {
        "tx_before_m": 3.0,
        "tx_after_m": 4.0,
        "rx_before_m": pytest.approx(math.sqrt(5.0)),
        "rx_after_m": 0.0,
    }


def test_trace_frame_rows() -> None:
    """Test one row per candidate with a single chosen mark."""
    frame = trace_frame(_result())
    assert list(frame.columns) == TRACE_COLUMNS
    assert len(frame) == 3
    assert frame["chosen"].tolist() == [0, 1, 0]
    assert frame["stage"].unique().tolist() == ["coarse"]
    assert frame["endpoint"].unique().tolist() == ["RX"]
    assert frame.loc[1, "cand_x"] == 31.0
    assert frame.loc[1, "cand_y"] == 38.0
    assert frame.loc[0, "total"] == 3.0


def test_trace_frame_empty_result() -> None:
    """Test that a result without iterations still has the trace columns."""
    result = _result()
    result.iterations = []
    frame = trace_frame(result)
    assert frame.empty
    assert list(frame.columns) == TRACE_COLUMNS


def test_comparison_frame_aligns_simulation() -> None:
    """Test that simulated profiles are shifted onto the measured frame."""
    meas = _profile(100.0, [-60.0, -70.0, -80.0])
    sim = _profile(120.0, [-60.0, -70.0, -80.0])
    frame = comparison_frame(meas, sim, None)

    assert list(frame.columns) == ["delay_ns", "meas_dbm", "sim_before_dbm", "sim_after_dbm"]
    assert frame["delay_ns"].tolist() == [100.0, 101.0, 102.0]
    assert frame["sim_before_dbm"].tolist() == frame["meas_dbm"].tolist()
    assert (frame["sim_after_dbm"] == FLOOR_DBM).all()


def test_comparison_frame_covers_union() -> None:
    """Test that the frame spans every profile and pads with the floor."""
    meas = _profile(0.0, [-60.0] + [FLOOR_DBM] * 20 + [-75.0])
    sim = _profile(0.0, [-70.0] * 4 + [-60.0] + [-90.0] * 30)
    frame = comparison_frame(meas, sim, sim)
    assert frame["delay_ns"].iloc[0] <= 0.0
    assert len(frame) >= 35
    assert frame["meas_dbm"].min() == FLOOR_DBM
    assert frame["sim_before_dbm"].max() == -60.0


def test_summary_groups() -> None:
    """Test per-group means and per-link rows of the campaign summary."""
    reports = [
        _report("north", "LOS"),
        _report("south", "NLOS", after=False),
        _report("east", None),
    ]
    summary = format_summary(reports)

    assert summary.startswith("# Calibration Summary\n")
    rows = {line.split("|")[1].strip(): line for line in summary.splitlines() if "|" in line}
    assert rows["LOS"].startswith("| LOS | 1 | 75.00 | 10.00 | 1.00 | 9.00 | 5.00 | 2.24 |")
    assert "| N/A | N/A |" in rows["NLOS"]
    assert rows["All"].startswith("| All | 3 | 75.00 | 10.00 | 1.00 | 9.00 |")
    assert rows["east"] == "| east | - | 4.0000 | 1.0000 | 75.00 | yes | 3 |"


def test_summary_skips_empty_groups() -> None:
    """Test that groups without links are left out."""
    summary = format_summary([_report("only", None)])
    assert "| LOS |" not in summary
    assert "| NLOS |" not in summary
    assert "| All | 1 |" in summary


def test_write_outputs(
    tmp_path: Path, canyon_scene: Scene, canyon_tx: LocalPosition, canyon_rx: LocalPosition
) -> None:
    """Test the files written for a real calibration run."""
    model = ImageMethodModel(canyon_scene, max_reflections=1)
    meas = synthesize_pdp(model.trace(canyon_tx, canyon_rx))
    result = calibrate(
        canyon_tx.offset(1.0, 0.5), canyon_rx, model, meas, OptimizerConfig(n_max_iters=1)
    )
    report = LinkReport(
        name="canyon",
        result=result,
        center=canyon_scene.projection_center,
        meas=meas,
        sim_before=synthesize_pdp(model.trace(result.tx_initial, result.rx_initial)),
        sim_after=synthesize_pdp(model.trace(result.tx_star, result.rx_star)),
    )

    out = tmp_path / "out" / "canyon"
    path = write_link_outputs(report, {"max_reflections": 1}, out)
    assert path == out / RESULT_FILE

    doc = json.loads(path.read_text())
    assert doc["config"] == {"max_reflections": 1}
    assert doc["loss_final"] <= doc["loss_initial"]

    trace = pd.read_csv(out / TRACE_FILE)
    assert list(trace.columns) == TRACE_COLUMNS
    stages = sum(len(s.candidates) for it in result.iterations for s in it.stages)
    assert len(trace) == stages
    assert set(trace["stage"]) == {"coarse", "fine", "powell"}
    assert set(trace["endpoint"]) == {"RX", "TX"}

    comparison = pd.read_csv(out / COMPARISON_FILE)
    assert comparison["meas_dbm"].max() == pytest.approx(meas.max_power_dbm)

    summary = write_summary([report], tmp_path / "out")
    assert summary == tmp_path / "out" / SUMMARY_FILE
    assert "| canyon |" in summary.read_text()
