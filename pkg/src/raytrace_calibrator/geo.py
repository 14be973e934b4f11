"""Geographic <-> local Cartesian conversion (spherical azimuthal equidistant)."""

import math
from dataclasses import dataclass
from functools import cached_property

from pyproj import Proj

EARTH_RADIUS_M = 6_371_000.0

# Beyond this radius the flat local frame is no longer trusted
MAX_PROJECTION_RADIUS_M = 100_000.0


class ProjectionError(ValueError):
    """Raised for invalid coordinates or points outside the projection's validity radius."""


def _check_lat_lon(latitude_deg: float, longitude_deg: float) -> None:
    if not -90.0 <= latitude_deg <= 90.0:
        raise ProjectionError(f"Latitude out of range [-90, 90]: {latitude_deg}")
    if not -180.0 <= longitude_deg <= 180.0:
        raise ProjectionError(f"Longitude out of range [-180, 180]: {longitude_deg}")


@dataclass(frozen=True)
class GeoPosition:
    """Recorded GPS position with antenna height above local terrain."""

    latitude_deg: float
    longitude_deg: float
    antenna_height_m: float

    def __post_init__(self) -> None:
        _check_lat_lon(self.latitude_deg, self.longitude_deg)
        if not self.antenna_height_m > 0:
            raise ProjectionError(f"Antenna height must be positive: {self.antenna_height_m}")


@dataclass(frozen=True)
class ProjectionCenter:
    """Tangent point of the azimuthal equidistant projection."""

    latitude_deg: float
    longitude_deg: float

    def __post_init__(self) -> None:
        _check_lat_lon(self.latitude_deg, self.longitude_deg)

    @cached_property
    def proj(self) -> Proj:
        """AEQD projection centered here, on a sphere of radius 6,371 km."""
        return Proj(
            proj="aeqd",
            lat_0=self.latitude_deg,
            lon_0=self.longitude_deg,
            R=EARTH_RADIUS_M,
            units="m",
        )


@dataclass(frozen=True)
class LocalPosition:
    """Point in the scene frame, meters. x east, y north, z up."""

    x_m: float
    y_m: float
    z_m: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x_m, self.y_m, self.z_m)):
            raise ValueError(f"Local position must be finite: {self}")
        if self.z_m < 0:
            raise ValueError(f"Local position must be at or above ground: z={self.z_m}")

    def offset(self, dx_m: float, dy_m: float) -> "LocalPosition":
        """Return a copy moved horizontally; z is never changed."""
        return LocalPosition(self.x_m + dx_m, self.y_m + dy_m, self.z_m)

    def distance_to(self, other: "LocalPosition") -> float:
        """3D Euclidean distance in meters."""
        return math.dist(self.as_tuple(), other.as_tuple())

    def horizontal_distance_to(self, other: "LocalPosition") -> float:
        """Distance in the (x, y) plane in meters."""
        return math.hypot(self.x_m - other.x_m, self.y_m - other.y_m)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x_m, self.y_m, self.z_m)


def project_to_local(p: GeoPosition, center: ProjectionCenter) -> LocalPosition:
    """Project a geographic position into the scene's local frame.

    The horizontal distance from the origin equals the great-circle distance
    from the center on a sphere of radius 6,371 km, along the true azimuth.
    The antenna height becomes z unchanged.

    Args:
        p: Geographic position to project
        center: Projection tangent point

    Returns:
        Local position in meters

    Raises:
        ProjectionError: Point 100 km or more from the center
    """
    x, y = center.proj(p.longitude_deg, p.latitude_deg)
    rho = math.hypot(x, y)
    if not rho < MAX_PROJECTION_RADIUS_M:
        raise ProjectionError(
            f"Point is {rho / 1000:.1f} km from the projection center (limit 100 km)"
        )
    return LocalPosition(float(x), float(y), p.antenna_height_m)


def unproject_to_geo(p: LocalPosition, center: ProjectionCenter) -> GeoPosition:
    """Inverse of project_to_local on the same spherical model.

    Args:
        p: Local position in meters
        center: Projection tangent point

    Returns:
        Geographic position; z becomes the antenna height

    Raises:
        ProjectionError: z is not a valid antenna height
    """
    lon, lat = center.proj(p.x_m, p.y_m, inverse=True)
    longitude = (float(lon) + 180.0) % 360.0 - 180.0
    return GeoPosition(float(lat), longitude, p.z_m)
