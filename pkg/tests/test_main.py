"""Tests for the command-line entry point."""

import json
import math
from pathlib import Path

import pandas as pd
import pytest

from raytrace_calibrator.config import load_run_config
from raytrace_calibrator.main import EXIT_INPUT, EXIT_OK, FIXTURE_CONFIG_FILE, run
from raytrace_calibrator.raytrace import free_space_path_loss_db
from raytrace_calibrator.report import RESULT_FILE, SUMMARY_FILE, TRACE_FILE

TX = ["-30", "-2", "10"]
RX = ["35", "3", "1.5"]


def _order_config(tmp_path: Path, max_reflections: int) -> Path:
    path = tmp_path / f"order{max_reflections}.json"
    path.write_text(json.dumps({"max_reflections": max_reflections}))
    return path


def _simulate(tmp_path: Path, scene: Path, out: Path, *extra: str) -> Path:
    code = run(
        [
            "simulate",
            "--config",
            str(_order_config(tmp_path, 1)),
            "--scene",
            str(scene),
            "--tx",
            *TX,
            "--rx",
            *RX,
            "--out",
            str(out),
            *extra,
        ]
    )
    assert code == EXIT_OK
    return out / "simulated_pdp.csv"


def test_project_from_scene_center(
    canyon_file: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    """Test that a point 100 m north of the center projects to y = 100."""
    lat = 40.6937 + math.degrees(100.0 / 6_371_000.0)
    code = run(["project", "--lat", str(lat), "--lon", "-73.9867", "--scene", str(canyon_file)])
    assert code == EXIT_OK
    local = json.loads(capsys.readouterr().out)
    assert local["x_m"] == pytest.approx(0.0, abs=1e-6)
    assert local["y_m"] == pytest.approx(100.0, abs=1e-3)
    assert local["z_m"] == 1.5


def test_project_explicit_center(capsys: pytest.CaptureFixture[str]) -> None:
    """Test projecting the center itself."""
    center = ["--center-lat", "48.1", "--center-lon", "11.5"]
    code = run(["project", "--lat", "48.1", "--lon", "11.5", *center])
    assert code == EXIT_OK
    assert json.loads(capsys.readouterr().out) == {"x_m": 0.0, "y_m": 0.0, "z_m": 1.5}


def test_project_invalid_latitude(canyon_file: Path, capsys: pytest.CaptureFixture[str]) -> None:
    """Test that an out-of-range latitude is an input error."""
    code = run(["project", "--lat", "95", "--lon", "0", "--scene", str(canyon_file)])
    assert code == EXIT_INPUT
    assert "❌" in capsys.readouterr().err


def test_project_requires_center() -> None:
    """Test that a projection center must be given."""
    assert run(["project", "--lat", "48.1", "--lon", "11.5"]) == EXIT_INPUT


def test_simulate_missing_scene(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    """Test that a missing scene file exits with an input error."""
    code = run(
        ["simulate", "--scene", str(tmp_path / "absent.json"), "--tx", *TX, "--rx", *RX]
    )
    assert code == EXIT_INPUT
    assert "scene file not found" in capsys.readouterr().err


def test_simulate_requires_positions(canyon_file: Path) -> None:
    """Test that simulate needs both endpoints."""
    assert run(["simulate", "--scene", str(canyon_file), "--tx", *TX]) == EXIT_INPUT


def test_simulate_free_space(tmp_path: Path, empty_scene_file: Path) -> None:
    """Test a single line-of-sight path 1000 ns long."""
    out = tmp_path / "out"
    code = run(
        [
            "simulate",
            "--config",
            str(_order_config(tmp_path, 0)),
            "--scene",
            str(empty_scene_file),
            "--tx",
            "0",
            "0",
            "10",
            "--rx",
            "299.792458",
            "0",
            "10",
            "--out",
            str(out),
        ]
    )
    assert code == EXIT_OK

    frame = pd.read_csv(out / "simulated_pdp.csv")
    assert frame["delay_ns"].tolist() == [1000.0]
    expected = -free_space_path_loss_db(299.792458, 28e9)
    assert frame["power_dbm"].iloc[0] == pytest.approx(expected, abs=1e-8)


def test_simulate_inside_building(tmp_path: Path, canyon_file: Path) -> None:
    """Test that an antenna inside a building is an input error."""
    code = run(
        ["simulate", "--scene", str(canyon_file), "--tx", "0", "20", "5", "--rx", *RX]
    )
    assert code == EXIT_INPUT


def test_loss_identical_files(
    tmp_path: Path, canyon_file: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    """Test that a profile scored against itself costs nothing."""
    csv = _simulate(tmp_path, canyon_file, tmp_path / "sim")
    capsys.readouterr()

    code = run(["loss", "--meas", str(csv), "--sim", str(csv)])
    assert code == EXIT_OK
    breakdown = json.loads(capsys.readouterr().out)
    assert breakdown["total"] == 0.0
    assert breakdown["outage"] is False
    assert breakdown["alignment"]["shift_ns"] == 0.0


def test_loss_with_adjustments(
    tmp_path: Path, canyon_file: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    """Test that --d-tx and --d-rx feed the regularizer."""
    csv = _simulate(tmp_path, canyon_file, tmp_path / "sim")
    capsys.readouterr()

    code = run(["loss", "--meas", str(csv), "--sim", str(csv), "--d-tx", "3", "--d-rx", "4"])
    assert code == EXIT_OK
    breakdown = json.loads(capsys.readouterr().out)
    assert breakdown["l_distance"] == pytest.approx(0.25)
    assert breakdown["total"] == pytest.approx(0.05 * 0.25)


def test_loss_empty_simulation_is_outage(
    tmp_path: Path, canyon_file: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    """Test that a simulated file without energy scores as an outage."""
    meas = _simulate(tmp_path, canyon_file, tmp_path / "sim")
    empty = tmp_path / "empty.csv"
    empty.write_text("delay_ns,power_dbm\n0,-200\n1,-200\n")
    capsys.readouterr()

    code = run(["loss", "--meas", str(meas), "--sim", str(empty)])
    captured = capsys.readouterr()
    assert code == EXIT_OK
    breakdown = json.loads(captured.out)
    assert breakdown["outage"] is True
    assert breakdown["total"] == 100.0
    assert "outage" in captured.err


def test_loss_requires_measurement(tmp_path: Path) -> None:
    """Test that loss needs a measured PDP."""
    sim = tmp_path / "sim.csv"
    sim.write_text("delay_ns,power_dbm\n0,-60\n")
    assert run(["loss", "--sim", str(sim)]) == EXIT_INPUT


def test_calibrate_fixed_point(tmp_path: Path, canyon_file: Path) -> None:
    """Test that calibrating against the pair's own simulation changes nothing."""
    meas = _simulate(tmp_path, canyon_file, tmp_path / "sim")
    out = tmp_path / "cal"
    code = run(
        [
            "calibrate",
            "--config",
            str(_order_config(tmp_path, 1)),
            "--scene",
            str(canyon_file),
            "--meas",
            str(meas),
            "--tx",
            *TX,
            "--rx",
            *RX,
            "--out",
            str(out),
            "--workers",
            "2",
        ]
    )
    assert code == EXIT_OK

    doc = json.loads((out / RESULT_FILE).read_text())
    assert doc["converged"] is True
    assert doc["iterations"] == 1
    assert doc["loss_reduction_pct"] == 0.0
    assert doc["loss_initial"] < 1e-6
    assert doc["adjustments"]["tx"]["norm_m"] == 0.0
    assert doc["adjustments"]["rx"]["norm_m"] == 0.0
    assert doc["config"]["max_reflections"] == 1
    assert doc["config"]["workers"] == 2
    assert (out / TRACE_FILE).exists()


def test_calibrate_requires_measurement(tmp_path: Path, canyon_file: Path) -> None:
    """Test that calibrate needs a measured PDP."""
    code = run(["calibrate", "--scene", str(canyon_file), "--tx", *TX, "--rx", *RX])
    assert code == EXIT_INPUT


def test_calibrate_external_without_command(tmp_path: Path, canyon_file: Path) -> None:
    """Test that the external model needs a command line."""
    code = run(["calibrate", "--scene", str(canyon_file), "--model", "external"])
    assert code == EXIT_INPUT


def test_calibrate_campaign(tmp_path: Path, canyon_file: Path) -> None:
    """Test a two-link campaign with per-link outputs and a summary."""
    meas = _simulate(tmp_path, canyon_file, tmp_path / "sim")
    config = tmp_path / "campaign.json"
    config.write_text(
        json.dumps(
            {
                "scene": str(canyon_file),
                "max_reflections": 1,
                "out": "results",
                "links": [
                    {"name": "street", "meas": str(meas), "tx": [-30, -2, 10],
                     "rx": [35, 3, 1.5], "scenario": "LOS"},
                    {"name": "corner", "meas": str(meas), "tx": [-30, -2, 10],
                     "rx": [35, 3, 1.5], "scenario": "NLOS"},
                ],
            }
        )
    )

    assert run(["calibrate", "--config", str(config)]) == EXIT_OK
    results = tmp_path / "results"
    assert (results / "street" / RESULT_FILE).exists()
    assert (results / "corner" / RESULT_FILE).exists()
    summary = (results / SUMMARY_FILE).read_text()
    assert "| LOS | 1 |" in summary
    assert "| NLOS | 1 |" in summary
    assert "| All | 2 |" in summary


def test_simulate_seed_fixtures(tmp_path: Path, canyon_file: Path) -> None:
    """Test the perturbed calibration config written next to a simulated PDP."""
    out = tmp_path / "fixture"
    csv = _simulate(tmp_path, canyon_file, out, "--seed-fixtures", "7")

    fixture = load_run_config(out / FIXTURE_CONFIG_FILE)
    assert fixture.meas == csv.resolve()
    assert fixture.max_reflections == 1
    assert fixture.ground_truth is not None
    assert fixture.ground_truth.tx == (-30.0, -2.0, 10.0)
    assert fixture.tx is not None and fixture.rx is not None
    assert math.dist(fixture.tx[:2], (-30.0, -2.0)) <= 5.0
    assert math.dist(fixture.rx[:2], (35.0, 3.0)) <= 5.0
    assert fixture.tx[2] == 10.0

    again = tmp_path / "again"
    _simulate(tmp_path, canyon_file, again, "--seed-fixtures", "7")
    repeat = load_run_config(again / FIXTURE_CONFIG_FILE)
    assert repeat.tx == fixture.tx
    assert repeat.rx == fixture.rx


def test_calibrate_seeded_fixture(tmp_path: Path, canyon_file: Path) -> None:
    """Test simulate --seed-fixtures followed by calibrate on the written config."""
    out = tmp_path / "fixture"
    _simulate(tmp_path, canyon_file, out, "--seed-fixtures", "3", "--delay-smoothing", "2")
    fixture = load_run_config(out / FIXTURE_CONFIG_FILE)
    assert fixture.delay_smoothing_ns == 2.0
    assert fixture.tx is not None and fixture.rx is not None
    assert fixture.ground_truth is not None

    cal = tmp_path / "cal"
    code = run(["calibrate", "--config", str(out / FIXTURE_CONFIG_FILE), "--out", str(cal)])
    assert code == EXIT_OK

    doc = json.loads((cal / RESULT_FILE).read_text())
    assert doc["config"]["delay_smoothing_ns"] == 2.0
    assert doc["config"]["max_reflections"] == 1
    assert doc["initial_positions"]["tx"]["local"]["x_m"] == fixture.tx[0]
    assert doc["loss_final"] <= doc["loss_initial"]
    assert doc["eval_count"] <= 1500

    errors = doc["ground_truth_error"]
    truth_tx, truth_rx = fixture.ground_truth.tx, fixture.ground_truth.rx
    assert errors["tx_before_m"] == pytest.approx(math.dist(fixture.tx[:2], truth_tx[:2]))
    assert errors["rx_before_m"] == pytest.approx(math.dist(fixture.rx[:2], truth_rx[:2]))
    tx_star = doc["calibrated_positions"]["tx"]["local"]
    rx_star = doc["calibrated_positions"]["rx"]["local"]
    assert errors["tx_after_m"] == pytest.approx(
        math.dist((tx_star["x_m"], tx_star["y_m"]), truth_tx[:2])
    )
    assert errors["rx_after_m"] == pytest.approx(
        math.dist((rx_star["x_m"], rx_star["y_m"]), truth_rx[:2])
    )
    assert doc["adjustments"]["tx"]["norm_m"] <= fixture.optimizer.d_max_m + 1e-9
    assert doc["adjustments"]["rx"]["norm_m"] <= fixture.optimizer.d_max_m + 1e-9


def test_calibrate_rejects_ground_level_antenna(tmp_path: Path, canyon_file: Path) -> None:
    """Test that an antenna at z = 0 is an input error."""
    meas = _simulate(tmp_path, canyon_file, tmp_path / "sim")
    code = run(
        ["calibrate", "--scene", str(canyon_file), "--meas", str(meas),
         "--tx", "-30", "-2", "0", "--rx", *RX]
    )
    assert code == EXIT_INPUT
