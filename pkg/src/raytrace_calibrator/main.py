"""Command-line entry point for the ray-tracing location calibrator."""

import argparse
import json
import sys
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from raytrace_calibrator.config import ConfigError, RunConfig, load_run_config
from raytrace_calibrator.geo import (
    GeoPosition,
    LocalPosition,
    ProjectionCenter,
    ProjectionError,
    project_to_local,
)
from raytrace_calibrator.loss import composite_loss
from raytrace_calibrator.measurements import (
    MeasuredLink,
    MeasurementError,
    load_measured_link,
    load_measured_pdp,
    save_pdp_csv,
)
from raytrace_calibrator.optimizer import IterationTrace, calibrate, simulate_profile
from raytrace_calibrator.pdp import EmptyProfileError, PowerDelayProfile
from raytrace_calibrator.raytrace import ForwardModel, GeometryError, ImageMethodModel
from raytrace_calibrator.report import LinkReport, write_link_outputs, write_summary
from raytrace_calibrator.scene import Scene, SceneError, load_scene
from raytrace_calibrator.simulator_client import (
    HttpForwardModel,
    SimulatorError,
    SubprocessForwardModel,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INPUT = 2

SIMULATED_PDP_FILE = "simulated_pdp.csv"
FIXTURE_CONFIG_FILE = "config.json"

# Failures caused by bad input rather than a bug
INPUT_ERRORS = (
    ValidationError,
    ConfigError,
    ProjectionError,
    SceneError,
    GeometryError,
    SimulatorError,
    EmptyProfileError,
    MeasurementError,
)


@contextmanager
def open_forward_model(cfg: RunConfig, scene: Scene) -> Iterator[ForwardModel]:
    """Build the configured forward model and release it afterwards."""
    if cfg.model == "external":
        assert cfg.external_cmd is not None
        with SubprocessForwardModel(
            cfg.external_cmd, scene.frequency_hz, cfg.external_timeout_s
        ) as process_model:
            yield process_model
    elif cfg.model == "http":
        assert cfg.simulator_url is not None
        http_model = HttpForwardModel(cfg.simulator_url, scene.frequency_hz, cfg.external_timeout_s)
        try:
            yield http_model
        finally:
            http_model.close()
    else:
        yield ImageMethodModel(scene, cfg.max_reflections, cfg.polarization, cfg.cutoff_dbm)


def _require_scene(cfg: RunConfig) -> Scene:
    if cfg.scene is None:
        raise ConfigError("a scene file is required (--scene or 'scene' in the config)")
    scene = load_scene(cfg.scene, cfg.frequency_hz)
    print(
        f"📋 Scene: {cfg.scene} ({len(scene.buildings)} buildings, "
        f"{scene.frequency_hz / 1e9:g} GHz)"
    )
    return scene


def _require_position(
    cfg: RunConfig, value: tuple[float, float, float] | None, label: str, scene: Scene
) -> LocalPosition:
    if value is None:
        raise ConfigError(f"an initial {label} position is required (--{label.lower()})")
    return cfg.local_position(value, scene.projection_center)


def _fmt_xy(p: LocalPosition) -> str:
    return f"({p.x_m:.2f}, {p.y_m:.2f})"


def _print_iteration(trace: IterationTrace) -> None:
    evals = sum(stage.eval_count for stage in trace.stages)
    print(
        f"  🔁 Iteration {trace.iteration}: RX {_fmt_xy(trace.rx)} TX {_fmt_xy(trace.tx)} "
        f"loss {trace.loss.total:.4f} ({evals} evaluations)"
    )


def _simulate(
    cfg: RunConfig, model: ForwardModel, tx: LocalPosition, rx: LocalPosition
) -> PowerDelayProfile | None:
    return simulate_profile(
        model,
        tx,
        rx,
        cfg.bin_width_ns,
        cfg.cutoff_dbm,
        cfg.max_extent_ns,
        cfg.delay_smoothing_ns,
    )


def _calibrate_link(
    cfg: RunConfig,
    scene: Scene,
    model: ForwardModel,
    link: MeasuredLink,
    ground_truth: tuple[LocalPosition, LocalPosition] | None = None,
) -> LinkReport:
    meas = link.profile
    print(f"📡 Link {link.name}: {meas.n_bins} bins from {link.source}")

    result = calibrate(
        link.tx,
        link.rx,
        model,
        meas,
        cfg.optimizer,
        cfg.weights,
        bin_width_ns=cfg.bin_width_ns,
        cutoff_dbm=cfg.cutoff_dbm,
        max_extent_ns=cfg.max_extent_ns,
        smoothing_ns=cfg.delay_smoothing_ns,
        workers=cfg.workers,
        on_iteration=_print_iteration,
    )

    if result.converged:
        print(f"  ✅ Converged in {result.iterations_used} iteration(s)")
    elif result.budget_exhausted:
        print(f"  ⚠️  Evaluation budget exhausted after {result.eval_count} evaluations")
    else:
        print(f"  ⚠️  Not converged after {result.iterations_used} iteration(s)")
    print(
        f"  📉 Loss {result.initial_loss.total:.4f} → {result.final_loss.total:.4f} "
        f"({result.loss_reduction_pct:.1f}% reduction)"
    )
    return LinkReport(
        name=link.name,
        result=result,
        center=scene.projection_center,
        meas=meas,
        sim_before=_simulate(cfg, model, result.tx_initial, result.rx_initial),
        sim_after=_simulate(cfg, model, result.tx_star, result.rx_star),
        scenario=link.scenario,
        window_ns=cfg.optimizer.align_window_ns,
        ground_truth=ground_truth,
    )


def cmd_calibrate(cfg: RunConfig) -> int:
    """Calibrate one link, or every configured link, and write result files."""
    scene = _require_scene(cfg)
    effective = cfg.effective()

    with open_forward_model(cfg, scene) as model:
        if not cfg.links:
            if cfg.meas is None:
                raise ConfigError("a measured PDP is required (--meas or 'meas' in the config)")
            measured = load_measured_link(
                "link",
                cfg.meas,
                _require_position(cfg, cfg.tx, "TX", scene),
                _require_position(cfg, cfg.rx, "RX", scene),
                noise_floor_dbm=cfg.noise_floor_dbm,
                default_bin_width_ns=cfg.bin_width_ns,
            )
            truth = None
            if cfg.ground_truth is not None:
                center = scene.projection_center
                truth = (
                    cfg.local_position(cfg.ground_truth.tx, center),
                    cfg.local_position(cfg.ground_truth.rx, center),
                )
            report = _calibrate_link(cfg, scene, model, measured, truth)
            path = write_link_outputs(report, effective, cfg.out)
            print(f"✅ Results written to {path.parent}")
            return EXIT_OK

        reports = []
        for i, link in enumerate(cfg.links, 1):
            print(f"\n[{i}/{len(cfg.links)}] {link.name}")
            measured = load_measured_link(
                link.name,
                link.meas,
                cfg.local_position(link.tx, scene.projection_center),
                cfg.local_position(link.rx, scene.projection_center),
                link.scenario,
                cfg.noise_floor_dbm,
                cfg.bin_width_ns,
            )
            report = _calibrate_link(cfg, scene, model, measured)
            write_link_outputs(report, effective, cfg.out / link.name)
            reports.append(report)

    summary = write_summary(reports, cfg.out)
    print(f"\n✅ Calibrated {len(reports)} link(s); summary at {summary}")
    return EXIT_OK


def _perturb(
    p: LocalPosition, radius_m: float, rng: np.random.Generator, scene: Scene
) -> LocalPosition:
    # Redraw until the perturbed antenna is outside every building
    for _ in range(1000):
        r = radius_m * float(rng.uniform(0.0, 1.0))
        theta = float(rng.uniform(0.0, 2.0 * np.pi))
        candidate = p.offset(r * np.cos(theta), r * np.sin(theta))
        if scene.building_at(candidate.x_m, candidate.y_m) is None:
            return candidate
    raise GeometryError(f"cannot place a perturbed antenna near {_fmt_xy(p)} outside buildings")


def _write_fixture_config(
    cfg: RunConfig, scene: Scene, tx: LocalPosition, rx: LocalPosition, csv_path: Path, seed: int
) -> Path:
    rng = np.random.default_rng(seed)
    radius = cfg.optimizer.d_max_m / 2.0
    tx_init = _perturb(tx, radius, rng, scene)
    rx_init = _perturb(rx, radius, rng, scene)

    assert cfg.scene is not None
    fixture = {
        "scene": str(cfg.scene.resolve()),
        "meas": str(csv_path.resolve()),
        "tx": list(tx_init.as_tuple()),
        "rx": list(rx_init.as_tuple()),
        "position_frame": "local",
        "frequency_hz": scene.frequency_hz,
        "max_reflections": cfg.max_reflections,
        "polarization": cfg.polarization,
        "bin_width_ns": cfg.bin_width_ns,
        "delay_smoothing_ns": cfg.delay_smoothing_ns,
        "ground_truth": {"tx": list(tx.as_tuple()), "rx": list(rx.as_tuple())},
    }
    path = cfg.out / FIXTURE_CONFIG_FILE
    path.write_text(json.dumps(fixture, indent=2) + "\n")
    return path


def cmd_simulate(cfg: RunConfig, seed_fixtures: int | None = None) -> int:
    """Write the simulated PDP of the configured pair in the measured-PDP format."""
    scene = _require_scene(cfg)
    tx = _require_position(cfg, cfg.tx, "TX", scene)
    rx = _require_position(cfg, cfg.rx, "RX", scene)

    with open_forward_model(cfg, scene) as model:
        profile = _simulate(cfg, model, tx, rx)
    if profile is None:
        raise EmptyProfileError(
            f"no path above {cfg.cutoff_dbm:g} dBm between TX {_fmt_xy(tx)} and RX {_fmt_xy(rx)}"
        )

    csv_path = save_pdp_csv(profile, cfg.out / SIMULATED_PDP_FILE)
    print(f"✅ Simulated PDP written to {csv_path}")
    if seed_fixtures is not None:
        fixture = _write_fixture_config(cfg, scene, tx, rx, csv_path, seed_fixtures)
        print(f"🧪 Fixture config written to {fixture}")
    return EXIT_OK


def cmd_loss(cfg: RunConfig, sim_path: Path, d_tx: float, d_rx: float) -> int:
    """Print the loss breakdown of a simulated PDP file against a measured one."""
    if cfg.meas is None:
        raise ConfigError("a measured PDP is required (--meas or 'meas' in the config)")
    meas = load_measured_pdp(cfg.meas, cfg.noise_floor_dbm, cfg.bin_width_ns)
    try:
        sim = load_measured_pdp(sim_path, None, cfg.bin_width_ns)
    except EmptyProfileError:
        print(f"⚠️  {sim_path} holds no energy; scoring as an outage", file=sys.stderr)
        sim = None

    breakdown = composite_loss(sim, meas, d_tx, d_rx, cfg.weights, cfg.optimizer.align_window_ns)
    print(json.dumps(breakdown.to_dict(), indent=2))
    return EXIT_OK


def cmd_project(
    latitude_deg: float, longitude_deg: float, height_m: float, center: ProjectionCenter
) -> int:
    """Print the local coordinates of a geographic position."""
    local = project_to_local(GeoPosition(latitude_deg, longitude_deg, height_m), center)
    print(json.dumps({"x_m": local.x_m, "y_m": local.y_m, "z_m": local.z_m}))
    return EXIT_OK


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON run configuration")
    parser.add_argument("--scene", type=Path, help="Scene JSON file")
    parser.add_argument("--meas", type=Path, help="Measured PDP CSV file")
    parser.add_argument("--tx", type=float, nargs=3, metavar=("A", "B", "Z"), help="TX position")
    parser.add_argument("--rx", type=float, nargs=3, metavar=("A", "B", "Z"), help="RX position")
    parser.add_argument("--frame", choices=["local", "geo"], help="Position frame for --tx/--rx")
    parser.add_argument("--freq", type=float, help="Carrier frequency in Hz")
    parser.add_argument("--model", choices=["builtin", "external", "http"], help="Forward model")
    parser.add_argument("--external-cmd", help="External simulator command line")
    parser.add_argument("--simulator-url", help="Ray-tracing service base URL")
    parser.add_argument("--workers", type=int, help="Threads for grid-stage evaluation")
    parser.add_argument("--out", type=Path, help="Output directory")
    parser.add_argument("--noise-floor", type=float, help="Measured-PDP noise floor in dBm")
    parser.add_argument(
        "--delay-smoothing",
        type=float,
        metavar="NS",
        help="Gaussian delay smoothing of simulated PDPs",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="raytrace-calibrator",
        description="Calibrate TX/RX locations of ray-tracing simulations against measured PDPs.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    _add_run_options(commands.add_parser("calibrate", help="Calibrate TX/RX positions"))

    simulate = commands.add_parser("simulate", help="Write a simulated PDP CSV")
    _add_run_options(simulate)
    simulate.add_argument(
        "--seed-fixtures",
        type=int,
        metavar="N",
        help="Also write a perturbed calibration config using random seed N",
    )

    loss = commands.add_parser("loss", help="Loss between a simulated and a measured PDP")
    _add_run_options(loss)
    loss.add_argument("--sim", type=Path, required=True, help="Simulated PDP CSV file")
    loss.add_argument("--d-tx", type=float, default=0.0, help="TX adjustment in meters")
    loss.add_argument("--d-rx", type=float, default=0.0, help="RX adjustment in meters")

    project = commands.add_parser("project", help="Geographic to local coordinates")
    project.add_argument("--lat", type=float, required=True)
    project.add_argument("--lon", type=float, required=True)
    project.add_argument("--height", type=float, default=1.5, help="Antenna height in meters")
    project.add_argument("--center-lat", type=float)
    project.add_argument("--center-lon", type=float)
    project.add_argument("--scene", type=Path, help="Take the projection center from a scene")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    return {
        "scene": args.scene,
        "meas": args.meas,
        "tx": args.tx,
        "rx": args.rx,
        "position_frame": args.frame,
        "frequency_hz": args.freq,
        "model": args.model,
        "external_cmd": args.external_cmd,
        "simulator_url": args.simulator_url,
        "workers": args.workers,
        "out": args.out,
        "noise_floor_dbm": args.noise_floor,
        "delay_smoothing_ns": args.delay_smoothing,
    }


def _projection_center(args: argparse.Namespace) -> ProjectionCenter:
    if args.center_lat is not None and args.center_lon is not None:
        return ProjectionCenter(args.center_lat, args.center_lon)
    if args.scene is not None:
        return load_scene(args.scene).projection_center
    raise ConfigError("a projection center is required (--center-lat/--center-lon or --scene)")


def run(argv: list[str] | None = None) -> int:
    """Parse arguments and dispatch a subcommand.

    Args:
        argv: Command-line arguments (defaults to sys.argv[1:])

    Returns:
        Exit code (0 = success, 1 = unexpected error, 2 = invalid input)
    """
    args = build_parser().parse_args(argv)

    try:
        if args.command == "project":
            return cmd_project(args.lat, args.lon, args.height, _projection_center(args))

        cfg = load_run_config(args.config, _overrides(args))
        if args.command != "loss":
            print("🔍 raytrace-calibrator starting...")
            print(f"🤖 Forward model: {cfg.model}")
        if args.command == "calibrate":
            return cmd_calibrate(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.seed_fixtures)
        return cmd_loss(cfg, args.sim, args.d_tx, args.d_rx)

    except INPUT_ERRORS as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as e:
        print(f"\n❌ Error: {e}", file=sys.stderr)
        import traceback

        traceback.print_exc()
        return EXIT_ERROR


def main() -> None:
    """Entry point for the CLI."""
    sys.exit(run())


if __name__ == "__main__":
    main()
