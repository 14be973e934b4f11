"""Frequency-dependent building material parameters (ITU-R P.2040 model)."""

from pydantic import BaseModel, ConfigDict, Field

# eps_r = a * f_GHz**b, sigma = c * f_GHz**d  (sigma in S/m)
ITU_MATERIALS: dict[str, tuple[float, float, float, float]] = {
    "concrete": (5.24, 0.0, 0.0462, 0.7822),
    "brick": (3.91, 0.0, 0.0238, 0.16),
    "plasterboard": (2.73, 0.0, 0.0085, 0.9395),
    "wood": (1.99, 0.0, 0.0047, 1.0718),
    "glass": (6.31, 0.0, 0.0036, 1.3394),
    "ceiling_board": (1.48, 0.0, 0.0011, 1.0750),
    "chipboard": (2.58, 0.0, 0.0217, 0.7800),
    "floorboard": (3.66, 0.0, 0.0044, 1.3515),
    "metal": (1.0, 0.0, 1e7, 0.0),
    # Ground types are only specified up to 10 GHz; used beyond as an extrapolation
    "very_dry_ground": (3.0, 0.0, 0.00015, 2.52),
    "medium_dry_ground": (15.0, -0.1, 0.035, 1.63),
    "wet_ground": (30.0, -0.4, 0.15, 1.30),
}


class Material(BaseModel):
    """Electromagnetic parameters of a reflecting surface."""

    model_config = ConfigDict(frozen=True)

    name: str = Field(default="custom", description="Material label")
    rel_permittivity: float = Field(..., ge=1.0, description="Real relative permittivity eps_r")
    conductivity_s_per_m: float = Field(..., ge=0.0, description="Conductivity sigma in S/m")


def normalize_material_name(name: str) -> str:
    """Normalize a material name for table lookup.

    Example: "Medium-Dry Ground" -> "medium_dry_ground"

    Args:
        name: Material name as written in a scene file

    Returns:
        Lookup key
    """
    return "_".join(name.strip().lower().replace("-", " ").split())


def itu_material(name: str, frequency_hz: float) -> Material:
    """Build a Material from the ITU table at a given frequency.

    Args:
        name: Material name (case, spaces and hyphens are ignored)
        frequency_hz: Carrier frequency in Hz

    Returns:
        Material with eps_r and sigma evaluated at the frequency

    Raises:
        ValueError: Unknown material or non-positive frequency
    """
    if frequency_hz <= 0:
        raise ValueError(f"Frequency must be positive: {frequency_hz}")

    key = normalize_material_name(name)
    params = ITU_MATERIALS.get(key)
    if params is None:
        known = ", ".join(sorted(ITU_MATERIALS))
        raise ValueError(f"Unknown material '{name}' (known: {known})")

    a, b, c, d = params
    f_ghz = frequency_hz / 1e9
    return Material(
        name=key,
        rel_permittivity=max(1.0, a * f_ghz**b),
        conductivity_s_per_m=c * f_ghz**d,
    )
