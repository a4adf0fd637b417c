"""Electromagnetic material properties and Fresnel surface interaction."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

SPEED_OF_LIGHT = 299_792_458.0  # m/s
VACUUM_PERMITTIVITY = 8.8541878128e-12  # F/m


@dataclass(frozen=True)
class ElectromagneticMaterial:
    """Homogeneous wall material: permittivity, conductivity, diffuse scattering.

    The scattering coefficient is the fraction of the incident field
    amplitude diverted into diffuse scattering; the specular branch is
    scaled by sqrt(1 - s^2) so total power never exceeds the incident.
    """

    relative_permittivity: float
    conductivity: float  # S/m
    scattering_coefficient: float = 0.0

    def __post_init__(self):
        if self.relative_permittivity < 1.0:
            raise ValueError(
                f"relative_permittivity must be >= 1, got {self.relative_permittivity}"
            )
        if self.conductivity < 0.0:
            raise ValueError(f"conductivity must be >= 0, got {self.conductivity}")
        if not 0.0 <= self.scattering_coefficient <= 1.0:
            raise ValueError(
                f"scattering_coefficient must be in [0,1], got {self.scattering_coefficient}"
            )

    def complex_permittivity(self, frequency_hz: float) -> complex:
        """Relative complex permittivity eps_r - j*sigma/(2*pi*f*eps0)."""
        return self.relative_permittivity - 1j * self.conductivity / (
            2.0 * math.pi * frequency_hz * VACUUM_PERMITTIVITY
        )


def concrete(frequency_hz: float, scattering_coefficient: float = 0.3) -> ElectromagneticMaterial:
    """Concrete with the standard frequency-dependent conductivity fit.

    sigma = 0.0462 * f_GHz^0.7976 S/m, eps_r = 5.24.  Used as the default
    for buildings whose material is not specified in the scene file.
    """
    f_ghz = frequency_hz / 1e9
    return ElectromagneticMaterial(
        relative_permittivity=5.24,
        conductivity=0.0462 * f_ghz**0.7976,
        scattering_coefficient=scattering_coefficient,
    )


def medium_dry_ground() -> ElectromagneticMaterial:
    """Fixed ground material (never calibrated): eps_r=15, sigma=0.035 S/m."""
    return ElectromagneticMaterial(
        relative_permittivity=15.0, conductivity=0.035, scattering_coefficient=0.0
    )


def fresnel_reflection(
    material: ElectromagneticMaterial,
    incidence_angle: float,
    frequency_hz: float,
    polarization: str,
) -> complex:
    """Complex Fresnel field reflection coefficient off a half-space.

    Parameters
    ----------
    material : ElectromagneticMaterial
        Wall material (incident medium is free space).
    incidence_angle : float
        Angle from the surface normal, radians, in [0, pi/2).
    frequency_hz : float
        Carrier frequency.
    polarization : str
        "TE" (E-field perpendicular to the plane of incidence) or "TM".

    Returns
    -------
    complex reflection coefficient with magnitude <= 1.
    """
    if not 0.0 <= incidence_angle < math.pi / 2:
        raise ValueError(f"incidence_angle must be in [0, pi/2), got {incidence_angle}")
    eps = material.complex_permittivity(frequency_hz)
    cos_i = math.cos(incidence_angle)
    sin2_i = math.sin(incidence_angle) ** 2
    # Branch with non-negative imaginary part gives the decaying transmitted wave.
    root = cmath.sqrt(eps - sin2_i)
    if polarization == "TE":
        return (cos_i - root) / (cos_i + root)
    if polarization == "TM":
        return (eps * cos_i - root) / (eps * cos_i + root)
    raise ValueError(f"polarization must be 'TE' or 'TM', got {polarization!r}")
