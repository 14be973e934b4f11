"""Deterministic image-method forward model (specular reflections only)."""

import itertools
import math
from dataclasses import dataclass
from typing import Literal, Protocol

import numpy as np
from numpy.typing import NDArray
from scipy.constants import epsilon_0, speed_of_light

from raytrace_calibrator.geo import LocalPosition
from raytrace_calibrator.materials import Material
from raytrace_calibrator.scene import Scene, WallSegment, wall_segments

Polarization = Literal["TE", "TM"]
InteractionKind = Literal["los", "wall-reflection", "ground-reflection"]

# Isotropic 0 dBi antennas, 0 dBm transmit power
TRANSMIT_POWER_DBM = 0.0
MIN_PATH_POWER_DBM = -160.0
MAX_REFLECTION_ORDER = 3
DEFAULT_REFLECTION_ORDER = 2

# Parametric slack for "strictly between endpoints" tests
_EPS = 1e-9

Vec3 = NDArray[np.float64]


class GeometryError(ValueError):
    """Raised for invalid TX/RX geometry (inside a building, coincident endpoints)."""


@dataclass(frozen=True)
class Interaction:
    """One step of a path's interaction chain."""

    kind: InteractionKind
    surface_id: str | None = None
    point: tuple[float, float, float] | None = None


@dataclass(frozen=True)
class PathComponent:
    """A single multipath arrival."""

    delay_ns: float
    power_dbm: float
    interactions: tuple[Interaction, ...] = ()

    def __post_init__(self) -> None:
        if not (math.isfinite(self.delay_ns) and self.delay_ns > 0):
            raise ValueError(f"Path delay must be positive: {self.delay_ns}")
        if not (math.isfinite(self.power_dbm) and self.power_dbm <= TRANSMIT_POWER_DBM):
            raise ValueError(f"Path power must not exceed transmit power: {self.power_dbm}")

    @property
    def n_reflections(self) -> int:
        return sum(1 for i in self.interactions if i.kind != "los")


@dataclass(frozen=True)
class PathList:
    """All paths for one TX/RX pair, sorted by ascending delay."""

    paths: tuple[PathComponent, ...]
    tx: LocalPosition
    rx: LocalPosition
    frequency_hz: float

    def __post_init__(self) -> None:
        delays = [p.delay_ns for p in self.paths]
        if any(b < a for a, b in itertools.pairwise(delays)):
            raise ValueError("PathList paths must be sorted by ascending delay")

    @classmethod
    def from_unsorted(
        cls,
        paths: list[PathComponent],
        tx: LocalPosition,
        rx: LocalPosition,
        frequency_hz: float,
    ) -> "PathList":
        """Build a PathList, sorting by delay (stable, then by power)."""
        ordered = sorted(paths, key=lambda p: (p.delay_ns, -p.power_dbm))
        return cls(paths=tuple(ordered), tx=tx, rx=rx, frequency_hz=frequency_hz)

    def __len__(self) -> int:
        return len(self.paths)


class ForwardModel(Protocol):
    """Anything that turns a TX/RX pair into multipath components.

    Implementations must be deterministic.
    """

    def trace(self, tx: LocalPosition, rx: LocalPosition) -> PathList: ...


def free_space_path_loss_db(distance_m: float, frequency_hz: float) -> float:
    """Friis free-space loss 20*log10(4*pi*d/lambda) in dB."""
    wavelength = speed_of_light / frequency_hz
    return 20.0 * math.log10(4.0 * math.pi * distance_m / wavelength)


def complex_permittivity(material: Material, frequency_hz: float) -> complex:
    """eps = eps_r - j*sigma/(2*pi*f*eps0)."""
    return complex(
        material.rel_permittivity,
        -material.conductivity_s_per_m / (2.0 * math.pi * frequency_hz * epsilon_0),
    )


def fresnel_reflection_coeff(
    material: Material,
    frequency_hz: float,
    incidence_angle_rad: float,
    polarization: Polarization = "TE",
) -> complex:
    """Fresnel reflection coefficient for an air to lossy-dielectric half-space.

    Args:
        material: Surface material
        frequency_hz: Carrier frequency in Hz
        incidence_angle_rad: Angle from the surface normal, in [0, pi/2)
        polarization: "TE" (perpendicular) or "TM" (parallel)

    Returns:
        Complex reflection coefficient with |gamma| <= 1
    """
    if not 0.0 <= incidence_angle_rad < math.pi / 2:
        raise ValueError(f"Incidence angle must be in [0, pi/2): {incidence_angle_rad}")

    eps = complex_permittivity(material, frequency_hz)
    cos_i = math.cos(incidence_angle_rad)
    root = complex(np.sqrt(eps - math.sin(incidence_angle_rad) ** 2))
    if polarization == "TE":
        return (cos_i - root) / (cos_i + root)
    return (eps * cos_i - root) / (eps * cos_i + root)


@dataclass(frozen=True)
class _Surface:
    """Reflecting plane n.p = offset with its finite extent."""

    kind: InteractionKind
    surface_id: str
    material: Material
    normal: Vec3
    offset: float
    wall: WallSegment | None = None

    def signed_distance(self, p: Vec3) -> float:
        return float(self.normal @ p) - self.offset

    def mirror(self, p: Vec3) -> Vec3:
        return p - 2.0 * self.signed_distance(p) * self.normal


def _ground_surface(material: Material) -> _Surface:
    return _Surface(
        kind="ground-reflection",
        surface_id="ground",
        material=material,
        normal=np.array([0.0, 0.0, 1.0]),
        offset=0.0,
    )


def _wall_surface(wall: WallSegment) -> _Surface | None:
    ex = wall.end[0] - wall.start[0]
    ey = wall.end[1] - wall.start[1]
    length = math.hypot(ex, ey)
    if length == 0.0:
        return None
    # Outward normal of a counter-clockwise footprint edge
    normal = np.array([ey / length, -ex / length, 0.0])
    offset = float(normal[0] * wall.start[0] + normal[1] * wall.start[1])
    return _Surface(
        kind="wall-reflection",
        surface_id=wall.surface_id,
        material=wall.material,
        normal=normal,
        offset=offset,
        wall=wall,
    )


class ImageMethodModel:
    """Built-in forward model: LOS plus specular wall/ground reflections.

    Visibility is tested in the footprint plane with a height check at each
    wall crossing; legs may pass over roofs.
    """

    def __init__(
        self,
        scene: Scene,
        max_reflections: int = DEFAULT_REFLECTION_ORDER,
        polarization: Polarization = "TE",
        cutoff_dbm: float = MIN_PATH_POWER_DBM,
    ) -> None:
        """Initialize the model and precompute scene geometry.

        Args:
            scene: Immutable scene
            max_reflections: Highest reflection order, 0..3
            polarization: Polarization used for all Fresnel coefficients
            cutoff_dbm: Paths weaker than this are discarded
        """
        if not 0 <= max_reflections <= MAX_REFLECTION_ORDER:
            raise GeometryError(
                f"max_reflections must be in [0, {MAX_REFLECTION_ORDER}]: {max_reflections}"
            )
        self.scene = scene
        self.max_reflections = max_reflections
        self.polarization: Polarization = polarization
        self.cutoff_dbm = cutoff_dbm

        self._walls = wall_segments(scene)
        surfaces = [_ground_surface(scene.ground_material)]
        surfaces.extend(s for s in map(_wall_surface, self._walls) if s is not None)
        self._surfaces = surfaces

        # Occluder arrays, one row per wall
        self._wall_ids = [w.surface_id for w in self._walls]
        self._wa = np.array([w.start for w in self._walls], dtype=float).reshape(-1, 2)
        self._wb = np.array([w.end for w in self._walls], dtype=float).reshape(-1, 2)
        self._wh = np.array([w.height_m for w in self._walls], dtype=float)

    def trace(self, tx: LocalPosition, rx: LocalPosition) -> PathList:
        """Trace all LOS and reflection paths between two endpoints.

        Args:
            tx: Transmitter position
            rx: Receiver position

        Returns:
            Paths sorted by delay; empty when everything is occluded or below cutoff

        Raises:
            GeometryError: Coincident endpoints or endpoint inside a building
        """
        self._check_endpoint("TX", tx)
        self._check_endpoint("RX", rx)
        p_tx = np.array(tx.as_tuple())
        p_rx = np.array(rx.as_tuple())
        if float(np.linalg.norm(p_rx - p_tx)) < _EPS:
            raise GeometryError("TX and RX coincide")

        paths: list[PathComponent] = []
        if self._leg_clear(p_tx, p_rx, ()):
            los = self._make_path([p_tx, p_rx], [])
            if los is not None:
                paths.append(los)

        n = len(self._surfaces)
        for order in range(1, self.max_reflections + 1):
            for seq in itertools.product(range(n), repeat=order):
                if any(a == b for a, b in itertools.pairwise(seq)):
                    continue
                path = self._reflection_path(p_tx, p_rx, [self._surfaces[i] for i in seq])
                if path is not None:
                    paths.append(path)

        return PathList.from_unsorted(paths, tx, rx, self.scene.frequency_hz)

    def _check_endpoint(self, label: str, p: LocalPosition) -> None:
        idx = self.scene.building_at(p.x_m, p.y_m)
        if idx is not None:
            raise GeometryError(
                f"{label} at ({p.x_m:.2f}, {p.y_m:.2f}) lies inside building {idx}"
            )

    def _reflection_path(self, p_tx: Vec3, p_rx: Vec3, seq: list[_Surface]) -> PathComponent | None:
        images = [p_tx]
        for surface in seq:
            images.append(surface.mirror(images[-1]))

        # Walk back from RX, intersecting each leg with its reflecting plane
        points: list[Vec3] = [p_rx]
        target = p_rx
        for j in range(len(seq) - 1, -1, -1):
            hit = self._intersect(seq[j], target, images[j + 1])
            if hit is None:
                return None
            points.append(hit)
            target = hit
        points.append(p_tx)
        points.reverse()

        # points = [tx, q1, ..., qk, rx]
        for j, surface in enumerate(seq):
            prev_pt, next_pt = points[j], points[j + 2]
            if surface.signed_distance(prev_pt) <= _EPS or surface.signed_distance(next_pt) <= _EPS:
                return None

        for j in range(len(points) - 1):
            exclude = tuple(
                seq[k].surface_id for k in (j - 1, j) if 0 <= k < len(seq)
            )
            if not self._leg_clear(points[j], points[j + 1], exclude):
                return None

        return self._make_path(points, seq)

    def _intersect(self, surface: _Surface, a: Vec3, b: Vec3) -> Vec3 | None:
        da = surface.signed_distance(a)
        db = surface.signed_distance(b)
        if da * db >= 0:
            return None
        hit = a + (da / (da - db)) * (b - a)

        if surface.wall is None:
            hit[2] = 0.0
            if self.scene.building_at(float(hit[0]), float(hit[1])) is not None:
                return None
            return hit

        wall = surface.wall
        ex = wall.end[0] - wall.start[0]
        ey = wall.end[1] - wall.start[1]
        t = ((hit[0] - wall.start[0]) * ex + (hit[1] - wall.start[1]) * ey) / (ex * ex + ey * ey)
        if not (0.0 <= t <= 1.0 and 0.0 <= hit[2] <= wall.height_m):
            return None
        return hit

    def _leg_clear(self, p: Vec3, q: Vec3, exclude: tuple[str, ...]) -> bool:
        if self._wa.shape[0] == 0:
            return True

        dx, dy = q[0] - p[0], q[1] - p[1]
        ex = self._wb[:, 0] - self._wa[:, 0]
        ey = self._wb[:, 1] - self._wa[:, 1]
        apx = self._wa[:, 0] - p[0]
        apy = self._wa[:, 1] - p[1]

        denom = dx * ey - dy * ex
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (apx * ey - apy * ex) / denom
            t = (apx * dy - apy * dx) / denom
        crossing = (
            (np.abs(denom) > 1e-12)
            & (s > _EPS)
            & (s < 1.0 - _EPS)
            & (t >= 0.0)
            & (t <= 1.0)
        )
        if exclude:
            crossing &= ~np.isin(self._wall_ids, exclude)
        if not crossing.any():
            return True

        z_at = p[2] + s[crossing] * (q[2] - p[2])
        return bool(np.all(z_at >= self._wh[crossing]))

    def _make_path(self, points: list[Vec3], seq: list[_Surface]) -> PathComponent | None:
        legs = [float(np.linalg.norm(points[j + 1] - points[j])) for j in range(len(points) - 1)]
        if min(legs) < _EPS:
            return None
        length = sum(legs)
        freq = self.scene.frequency_hz

        power_dbm = TRANSMIT_POWER_DBM - free_space_path_loss_db(length, freq)
        interactions: list[Interaction] = []
        for j, surface in enumerate(seq):
            incoming = points[j + 1] - points[j]
            cos_i = abs(float(surface.normal @ incoming)) / legs[j]
            angle = math.acos(min(1.0, cos_i))
            if angle >= math.pi / 2:
                return None
            gamma = fresnel_reflection_coeff(surface.material, freq, angle, self.polarization)
            magnitude = abs(gamma)
            if magnitude == 0.0:
                return None
            power_dbm += 20.0 * math.log10(magnitude)
            hit = points[j + 1]
            interactions.append(
                Interaction(
                    kind=surface.kind,
                    surface_id=surface.surface_id,
                    point=(float(hit[0]), float(hit[1]), float(hit[2])),
                )
            )

        if power_dbm < self.cutoff_dbm:
            return None
        if not seq:
            interactions.append(Interaction(kind="los"))
        return PathComponent(
            delay_ns=length / speed_of_light * 1e9,
            power_dbm=power_dbm,
            interactions=tuple(interactions),
        )


def trace_image_method(
    s: Scene,
    tx: LocalPosition,
    rx: LocalPosition,
    max_reflections: int = DEFAULT_REFLECTION_ORDER,
    polarization: Polarization = "TE",
) -> PathList:
    """Trace one TX/RX pair through a scene with the built-in image method.

    Args:
        s: Scene
        tx: Transmitter position
        rx: Receiver position
        max_reflections: Highest reflection order, 0..3

    Returns:
        PathList sorted by delay
    """
    return ImageMethodModel(s, max_reflections, polarization).trace(tx, rx)
