"""Run configuration: JSON config file, RTCAL_* environment and CLI overrides."""

import json
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from raytrace_calibrator.geo import (
    GeoPosition,
    LocalPosition,
    ProjectionCenter,
    ProjectionError,
    project_to_local,
)
from raytrace_calibrator.loss import LossWeights
from raytrace_calibrator.optimizer import OptimizerConfig
from raytrace_calibrator.pdp import DEFAULT_BIN_WIDTH_NS, MAX_EXTENT_NS
from raytrace_calibrator.raytrace import (
    DEFAULT_REFLECTION_ORDER,
    MAX_REFLECTION_ORDER,
    MIN_PATH_POWER_DBM,
    Polarization,
)
from raytrace_calibrator.simulator_client import DEFAULT_TIMEOUT_S

Triple = tuple[float, float, float]

# Keys holding paths that are resolved against the config file's directory
_PATH_KEYS = ("scene", "meas", "out")


class ConfigError(ValueError):
    """Raised when a config file cannot be read or parsed."""


class LinkConfig(BaseModel):
    """One measured link of a multi-link campaign."""

    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., min_length=1, pattern=r"^[A-Za-z0-9_.-]+$")
    meas: Path
    tx: Triple
    rx: Triple
    scenario: Literal["LOS", "NLOS"] | None = None

    @field_validator("meas")
    @classmethod
    def validate_meas_exists(cls, v: Path) -> Path:
        """Require the measured PDP file to exist."""
        if not v.is_file():
            raise ValueError(f"measured PDP file not found: {v}")
        return v


class GroundTruth(BaseModel):
    """True positions recorded alongside synthetic fixtures."""

    model_config = ConfigDict(extra="forbid")

    tx: Triple
    rx: Triple


class RunConfig(BaseSettings):
    """Configuration for one calibrate/simulate/loss run."""

    model_config = SettingsConfigDict(
        env_prefix="RTCAL_",
        env_nested_delimiter="__",
        case_sensitive=False,
        extra="forbid",
    )

    # Inputs
    scene: Path | None = Field(default=None, description="Scene JSON file")
    meas: Path | None = Field(default=None, description="Measured PDP CSV file")
    tx: Triple | None = Field(default=None, description="Initial TX position")
    rx: Triple | None = Field(default=None, description="Initial RX position")
    position_frame: Literal["local", "geo"] = Field(
        default="local", description="local: (x, y, z) meters; geo: (lat, lon, height)"
    )
    frequency_hz: float | None = Field(default=None, gt=0, description="Overrides the scene's")
    noise_floor_dbm: float | None = Field(default=None, description="Measured-PDP noise floor")
    links: list[LinkConfig] = Field(default_factory=list, description="Multi-link batch")
    ground_truth: GroundTruth | None = None

    # Forward model
    model: Literal["builtin", "external", "http"] = Field(default="builtin")
    external_cmd: str | None = Field(default=None, description="Simulator command line")
    simulator_url: str | None = Field(default=None, description="Simulator service base URL")
    external_timeout_s: float = Field(default=DEFAULT_TIMEOUT_S, gt=0)
    max_reflections: int = Field(default=DEFAULT_REFLECTION_ORDER, ge=0, le=MAX_REFLECTION_ORDER)
    polarization: Polarization = "TE"
    bin_width_ns: float = Field(default=DEFAULT_BIN_WIDTH_NS, gt=0)
    cutoff_dbm: float = MIN_PATH_POWER_DBM
    max_extent_ns: float = Field(default=MAX_EXTENT_NS, gt=0)
    delay_smoothing_ns: float = Field(
        default=0.0, ge=0, description="Gaussian delay smoothing of simulated PDPs"
    )

    # Search
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    weights: LossWeights = Field(default_factory=LossWeights)
    workers: int = Field(default=1, ge=1)

    # Outputs
    out: Path = Field(default=Path("results"), description="Output directory")

    @field_validator("scene", "meas")
    @classmethod
    def validate_file_exists(cls, v: Path | None, info: ValidationInfo) -> Path | None:
        """Require referenced input files to exist."""
        if v is not None and not v.is_file():
            raise ValueError(f"{info.field_name} file not found: {v}")
        return v

    @model_validator(mode="after")
    def validate_forward_model(self) -> "RunConfig":
        """Require the settings of the selected forward model."""
        if self.model == "external" and not self.external_cmd:
            raise ValueError("external_cmd is required when model is 'external'")
        if self.model == "http" and not self.simulator_url:
            raise ValueError("simulator_url is required when model is 'http'")
        return self

    def local_position(self, value: Triple, center: ProjectionCenter) -> LocalPosition:
        """Interpret a configured position in the configured frame.

        Raises:
            ProjectionError: Invalid coordinates or a non-positive antenna height
        """
        if self.position_frame == "geo":
            lat, lon, height = value
            return project_to_local(GeoPosition(lat, lon, height), center)
        x, y, z = value
        if not z > 0:
            raise ProjectionError(f"Antenna height must be positive: {z}")
        return LocalPosition(x, y, z)

    def effective(self) -> dict[str, Any]:
        """Full effective configuration (defaults included) as JSON-ready data."""
        return self.model_dump(mode="json")


def _resolve_paths(data: dict[str, Any], base: Path) -> dict[str, Any]:
    resolved = dict(data)
    for key in _PATH_KEYS:
        value = resolved.get(key)
        if isinstance(value, str) and not Path(value).is_absolute():
            resolved[key] = str(base / value)
    links = resolved.get("links")
    if isinstance(links, list):
        resolved["links"] = [
            {**link, "meas": str(base / link["meas"])}
            if isinstance(link, dict)
            and isinstance(link.get("meas"), str)
            and not Path(link["meas"]).is_absolute()
            else link
            for link in links
        ]
    return resolved


def load_run_config(
    path: Path | str | None = None, overrides: dict[str, Any] | None = None
) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus explicit overrides.

    Precedence is overrides > file > RTCAL_* environment > defaults. Relative
    paths in the file are taken relative to the file's directory.

    Args:
        path: JSON config file
        overrides: Values from command-line flags (None values are ignored)

    Returns:
        Validated run configuration

    Raises:
        ConfigError: Unreadable or malformed config file
        pydantic.ValidationError: Invalid values
    """
    data: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e.strerror}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config file must contain a JSON object")
        data = _resolve_paths(raw, path.parent)

    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value

    return RunConfig(**data)
