"""Pytest configuration and shared fixtures."""

import json
import os
from pathlib import Path
from typing import Any

import pytest

from raytrace_calibrator.geo import LocalPosition
from raytrace_calibrator.scene import Scene, scene_from_dict

CANYON_FREQUENCY_HZ = 28e9


def canyon_scene_data() -> dict[str, Any]:
    """Street canyon along x, closed by a back building at x = 80."""
    return {
        "projection_center": {"lat": 40.6937, "lon": -73.9867},
        "frequency_hz": CANYON_FREQUENCY_HZ,
        "ground_material": {"name": "medium_dry_ground"},
        "materials": {"glass": {"eps_r": 6.27, "sigma": 0.4}},
        "buildings": [
            {
                "footprint": [[-100, 10], [60, 10], [60, 30], [-100, 30]],
                "height_m": 20.0,
                "material": "concrete",
            },
            {
                "footprint": [[-100, -30], [60, -30], [60, -10], [-100, -10]],
                "height_m": 25.0,
                "material": "concrete",
            },
            {
                "footprint": [[80, -30], [100, -30], [100, 30], [80, 30]],
                "height_m": 30.0,
                "material": "glass",
            },
        ],
    }


@pytest.fixture(autouse=True)
def isolate_env(monkeypatch: pytest.MonkeyPatch) -> None:
    """Keep RTCAL_* variables from the developer's shell out of the tests."""
    for key in list(os.environ):
        if key.upper().startswith("RTCAL_"):
            monkeypatch.delenv(key)


@pytest.fixture
def canyon_data() -> dict[str, Any]:
    """Scene-file document of the street canyon."""
    return canyon_scene_data()


@pytest.fixture
def canyon_scene() -> Scene:
    """Validated street-canyon scene."""
    return scene_from_dict(canyon_scene_data())


@pytest.fixture
def canyon_file(tmp_path: Path) -> Path:
    """Street-canyon scene written as a JSON file."""
    path = tmp_path / "canyon.json"
    path.write_text(json.dumps(canyon_scene_data(), indent=2))
    return path


@pytest.fixture
def canyon_tx() -> LocalPosition:
    """Transmitter in the canyon, 10 m above ground."""
    return LocalPosition(-30.0, -2.0, 10.0)


@pytest.fixture
def canyon_rx() -> LocalPosition:
    """Receiver in the canyon at handset height."""
    return LocalPosition(35.0, 3.0, 1.5)


@pytest.fixture
def empty_scene_file(tmp_path: Path) -> Path:
    """Scene without buildings."""
    path = tmp_path / "empty.json"
    path.write_text(
        json.dumps(
            {
                "projection_center": {"lat": 40.6937, "lon": -73.9867},
                "frequency_hz": CANYON_FREQUENCY_HZ,
                "buildings": [],
            }
        )
    )
    return path
