"""2.5D scene: extruded polygon buildings on flat ground."""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from raytrace_calibrator.geo import ProjectionCenter
from raytrace_calibrator.materials import Material, itu_material, normalize_material_name

Point2D = tuple[float, float]

DEFAULT_GROUND_MATERIAL = "medium_dry_ground"


class SceneError(ValueError):
    """Raised when a scene file cannot be parsed or violates scene invariants."""


def _cross(o: Point2D, a: Point2D, b: Point2D) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _signed_area(vertices: tuple[Point2D, ...]) -> float:
    n = len(vertices)
    return 0.5 * sum(
        vertices[i][0] * vertices[(i + 1) % n][1] - vertices[(i + 1) % n][0] * vertices[i][1]
        for i in range(n)
    )


def _on_segment(p: Point2D, a: Point2D, b: Point2D) -> bool:
    return (
        min(a[0], b[0]) <= p[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])
    )


def segments_intersect(p1: Point2D, p2: Point2D, q1: Point2D, q2: Point2D) -> bool:
    """Check whether two closed 2D segments share at least one point."""
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    if ((d1 > 0 > d2) or (d1 < 0 < d2)) and ((d3 > 0 > d4) or (d3 < 0 < d4)):
        return True
    if d1 == 0 and _on_segment(p1, q1, q2):
        return True
    if d2 == 0 and _on_segment(p2, q1, q2):
        return True
    if d3 == 0 and _on_segment(q1, p1, p2):
        return True
    return d4 == 0 and _on_segment(q2, p1, p2)


def _segments_cross(p1: Point2D, p2: Point2D, q1: Point2D, q2: Point2D) -> bool:
    """Proper crossing only: touching and collinear overlap do not count."""
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    return ((d1 > 0 > d2) or (d1 < 0 < d2)) and ((d3 > 0 > d4) or (d3 < 0 < d4))


def point_in_polygon(x: float, y: float, vertices: tuple[Point2D, ...]) -> bool:
    """Ray-casting test; points exactly on the boundary may go either way."""
    inside = False
    n = len(vertices)
    for i in range(n):
        (xa, ya), (xb, yb) = vertices[i], vertices[(i + 1) % n]
        if (ya > y) != (yb > y):
            x_cross = xa + (y - ya) * (xb - xa) / (yb - ya)
            if x < x_cross:
                inside = not inside
    return inside


class Building(BaseModel):
    """Vertical prism over a simple polygon footprint."""

    model_config = ConfigDict(frozen=True)

    footprint: tuple[Point2D, ...] = Field(..., description="Vertices in meters, counter-clockwise")
    height_m: float = Field(..., gt=0, description="Roof height above ground in meters")
    material: Material

    @field_validator("footprint")
    @classmethod
    def validate_footprint(cls, v: tuple[Point2D, ...]) -> tuple[Point2D, ...]:
        """Require a simple polygon with >= 3 vertices and store it counter-clockwise."""
        if len(v) < 3:
            raise ValueError(f"footprint needs at least 3 vertices, got {len(v)}")
        area = _signed_area(v)
        if area == 0:
            raise ValueError("footprint has zero area")

        n = len(v)
        for i in range(n):
            for j in range(i + 1, n):
                # Adjacent edges share a vertex by construction
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                    raise ValueError(f"footprint is self-intersecting (edges {i} and {j})")

        return v if area > 0 else tuple(reversed(v))

    def contains(self, x: float, y: float) -> bool:
        """Check whether a horizontal point lies inside the footprint."""
        return point_in_polygon(x, y, self.footprint)

    def edges(self) -> list[tuple[Point2D, Point2D]]:
        n = len(self.footprint)
        return [(self.footprint[i], self.footprint[(i + 1) % n]) for i in range(n)]


def _in_triangle(p: Point2D, a: Point2D, b: Point2D, c: Point2D) -> bool:
    # Closed test for a counter-clockwise triangle
    return _cross(a, b, p) >= 0 and _cross(b, c, p) >= 0 and _cross(c, a, p) >= 0


def _interior_point(vertices: tuple[Point2D, ...]) -> Point2D:
    """Point strictly inside a counter-clockwise simple polygon.

    Uses the centroid of the first ear: a convex corner whose triangle holds no
    other vertex. Unlike the vertex centroid this stays inside concave footprints.
    """
    n = len(vertices)
    for i in range(n):
        a, b, c = vertices[(i - 1) % n], vertices[i], vertices[(i + 1) % n]
        if _cross(a, b, c) <= 0:
            continue
        if any(_in_triangle(p, a, b, c) for p in vertices if p not in (a, b, c)):
            continue
        return ((a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0)
    # Unreachable for simple polygons, which always have two ears
    raise ValueError("footprint has no ear")


def _buildings_overlap(a: Building, b: Building) -> bool:
    for ea in a.edges():
        for eb in b.edges():
            if _segments_cross(ea[0], ea[1], eb[0], eb[1]):
                return True
    ca = _interior_point(a.footprint)
    cb = _interior_point(b.footprint)
    return (a.contains(*ca) and b.contains(*ca)) or (a.contains(*cb) and b.contains(*cb))


class Scene(BaseModel):
    """Immutable simulation environment."""

    model_config = ConfigDict(frozen=True)

    projection_center: ProjectionCenter
    buildings: tuple[Building, ...] = ()
    ground_material: Material
    frequency_hz: float = Field(..., gt=0, description="Carrier frequency in Hz")

    @model_validator(mode="after")
    def validate_no_overlap(self) -> "Scene":
        """Reject pairwise overlapping building footprints."""
        for i, a in enumerate(self.buildings):
            for j in range(i + 1, len(self.buildings)):
                if _buildings_overlap(a, self.buildings[j]):
                    raise ValueError(f"building {i} overlaps building {j}")
        return self

    def building_at(self, x: float, y: float) -> int | None:
        """Index of the building whose footprint contains (x, y), if any."""
        for i, building in enumerate(self.buildings):
            if building.contains(x, y):
                return i
        return None


@dataclass(frozen=True)
class WallSegment:
    """One vertical wall: a footprint edge extruded from the ground to the roof."""

    start: Point2D
    end: Point2D
    height_m: float
    material: Material
    surface_id: str
    building_index: int


def wall_segments(s: Scene) -> list[WallSegment]:
    """List every wall of the scene, one per footprint edge, in footprint order.

    Args:
        s: Validated scene

    Returns:
        Wall segments; surface ids are "b<building>e<edge>"
    """
    walls: list[WallSegment] = []
    for b_idx, building in enumerate(s.buildings):
        for e_idx, (start, end) in enumerate(building.edges()):
            walls.append(
                WallSegment(
                    start=start,
                    end=end,
                    height_m=building.height_m,
                    material=building.material,
                    surface_id=f"b{b_idx}e{e_idx}",
                    building_index=b_idx,
                )
            )
    return walls


# Scene file schema


class _MaterialEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str | None = None
    eps_r: float | None = None
    sigma: float | None = None


class _CenterSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lat: float
    lon: float


class _BuildingSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    footprint: list[Point2D]
    height_m: float
    material: str = "concrete"


class _SceneFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    projection_center: _CenterSpec
    frequency_hz: float
    ground_material: _MaterialEntry = Field(
        default_factory=lambda: _MaterialEntry(name=DEFAULT_GROUND_MATERIAL)
    )
    materials: dict[str, _MaterialEntry] = Field(default_factory=dict)
    buildings: list[_BuildingSpec] = Field(default_factory=list)


def _resolve_material(entry: _MaterialEntry, fallback_name: str, frequency_hz: float) -> Material:
    name = entry.name or fallback_name
    if entry.eps_r is None and entry.sigma is None:
        return itu_material(name, frequency_hz)
    if entry.eps_r is None or entry.sigma is None:
        raise ValueError(f"material '{name}' needs both eps_r and sigma")
    return Material(name=name, rel_permittivity=entry.eps_r, conductivity_s_per_m=entry.sigma)


def _format_validation_error(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def scene_from_dict(data: dict[str, Any], frequency_hz: float | None = None) -> Scene:
    """Build a validated Scene from a scene-file document.

    Args:
        data: Parsed scene JSON
        frequency_hz: Override for the file's carrier frequency

    Returns:
        Validated Scene

    Raises:
        SceneError: Schema or invariant violation, naming the offending field
    """
    try:
        raw = _SceneFile.model_validate(data)
    except ValidationError as e:
        raise SceneError(_format_validation_error(e)) from e

    freq = frequency_hz if frequency_hz is not None else raw.frequency_hz
    if freq <= 0:
        raise SceneError(f"frequency_hz: must be positive, got {freq}")

    try:
        materials = {
            normalize_material_name(key): _resolve_material(entry, key, freq)
            for key, entry in raw.materials.items()
        }
        ground = _resolve_material(raw.ground_material, DEFAULT_GROUND_MATERIAL, freq)

        buildings = []
        for idx, entry in enumerate(raw.buildings):
            key = normalize_material_name(entry.material)
            material = materials.get(key) or itu_material(key, freq)
            try:
                buildings.append(
                    Building(
                        footprint=tuple(entry.footprint),
                        height_m=entry.height_m,
                        material=material,
                    )
                )
            except ValidationError as e:
                raise SceneError(f"building {idx}: {_format_validation_error(e)}") from e

        center = ProjectionCenter(raw.projection_center.lat, raw.projection_center.lon)
        return Scene(
            projection_center=center,
            buildings=tuple(buildings),
            ground_material=ground,
            frequency_hz=freq,
        )
    except ValidationError as e:
        raise SceneError(_format_validation_error(e)) from e
    except SceneError:
        raise
    except ValueError as e:
        raise SceneError(str(e)) from e


def load_scene(path: Path | str, frequency_hz: float | None = None) -> Scene:
    """Load and validate a scene JSON file.

    Args:
        path: Scene file path
        frequency_hz: Override for the file's carrier frequency

    Returns:
        Validated Scene

    Raises:
        SceneError: Missing file, invalid JSON (with line/column) or invariant violation
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise SceneError(f"cannot read scene file {path}: {e.strerror}") from e

    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneError(f"{path}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}") from e

    if not isinstance(data, dict):
        raise SceneError(f"{path}: scene file must contain a JSON object")

    try:
        return scene_from_dict(data, frequency_hz)
    except SceneError as e:
        raise SceneError(f"{path}: {e}") from e
