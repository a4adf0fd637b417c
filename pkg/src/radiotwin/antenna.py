"""Sector antenna element pattern and planar-array geometry.

The element follows the parametrized sector pattern of the 3GPP model:
quadratic roll-off in each cut, clamped by the side-lobe floor, with
half-power beamwidths of 65 deg (azimuth) and 10 deg (elevation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scene import ResolvedSector


@dataclass(frozen=True)
class ElementPattern:
    azimuth_hpbw_deg: float = 65.0
    elevation_hpbw_deg: float = 10.0
    max_attenuation_db: float = 30.0  # A_max, also the back-lobe floor
    sla_v_db: float = 30.0  # vertical side-lobe limit
    peak_gain_dbi: float = 8.0


DEFAULT_PATTERN = ElementPattern()


def element_gain(pattern: ElementPattern, azimuth_off_deg: float, elevation_off_deg: float) -> float:
    """Element power gain in dBi at the given offsets from boresight."""
    att_h = min(12.0 * (azimuth_off_deg / pattern.azimuth_hpbw_deg) ** 2, pattern.max_attenuation_db)
    att_v = min(12.0 * (elevation_off_deg / pattern.elevation_hpbw_deg) ** 2, pattern.sla_v_db)
    return pattern.peak_gain_dbi - min(att_h + att_v, pattern.max_attenuation_db)


class SectorFrame:
    """Orientation frame and element layout of one sector's planar array.

    Bearing is compass azimuth of the broadside (0 = +y, 90 = +x); tilt
    rotates the boresight downward.  Elements sit on a half-wavelength grid
    spanned by the horizontal axis (columns) and the tilted vertical axis
    (rows); element index = col * rows + row, matching the Kronecker order
    of the beam codebook.
    """

    def __init__(self, sector: ResolvedSector, wavelength_m: float,
                 pattern: ElementPattern = DEFAULT_PATTERN):
        self.sector = sector
        self.pattern = pattern
        self.wavelength = wavelength_m
        az = math.radians(sector.bearing_deg)
        tl = math.radians(sector.tilt_deg)
        self.boresight = np.array(
            [math.sin(az) * math.cos(tl), math.cos(az) * math.cos(tl), -math.sin(tl)]
        )
        self.axis_h = np.array([math.cos(az), -math.sin(az), 0.0])
        self.axis_v = np.cross(self.axis_h, self.boresight)
        s = wavelength_m / 2.0
        rows, cols = sector.rows, sector.cols
        cc, rr = np.meshgrid(np.arange(cols), np.arange(rows), indexing="ij")
        # (n_elements, 3), flattened column-major: index = col * rows + row
        self.element_positions = (
            cc.reshape(-1, 1) * s * self.axis_h + rr.reshape(-1, 1) * s * self.axis_v
        )
        self.n_elements = rows * cols

    def direction_offsets(self, directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(azimuth_off_deg, elevation_off_deg) for unit directions (N, 3)."""
        d = np.atleast_2d(directions)
        b = d @ self.boresight
        h = d @ self.axis_h
        v = np.clip(d @ self.axis_v, -1.0, 1.0)
        az = np.degrees(np.arctan2(h, b))
        el = np.degrees(np.arcsin(v))
        return az, el

    def element_amplitude(self, directions: np.ndarray) -> np.ndarray:
        """Element field amplitude (sqrt of linear power gain) per direction."""
        az, el = self.direction_offsets(directions)
        p = self.pattern
        att_h = np.minimum(12.0 * (az / p.azimuth_hpbw_deg) ** 2, p.max_attenuation_db)
        att_v = np.minimum(12.0 * (el / p.elevation_hpbw_deg) ** 2, p.sla_v_db)
        gain_db = p.peak_gain_dbi - np.minimum(att_h + att_v, p.max_attenuation_db)
        return 10.0 ** (gain_db / 20.0)

    def steering(self, directions: np.ndarray) -> np.ndarray:
        """Array response exp(-j*k*<r_e, u>) for unit directions; (N, n_elements)."""
        d = np.atleast_2d(directions)
        k = 2.0 * math.pi / self.wavelength
        return np.exp(-1j * k * (d @ self.element_positions.T))
