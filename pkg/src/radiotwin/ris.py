"""Physically consistent RIS model: wall placement, phase profile, cascade.

Elements sit on a half-wavelength grid inside the aperture; each applies
the modulation Gamma = R * sqrt(eta) * A * exp(j*phi).  The configured
profile phi(r_e) = k * (|bs - r_e| + |r_e - target|) cancels the two-segment
propagation phase, so every element contribution arrives in phase at the
target.  The cascade joins the tile channel in the same beam-domain
convention the coverage module uses, gated by a single LoS check per unit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .antenna import SectorFrame
from .materials import SPEED_OF_LIGHT
from .sampling import fibonacci_directions
from .spatial import SpatialIndex


class RisPlacementError(Exception):
    """Wall cannot host the requested aperture."""


class RisConfigurationError(Exception):
    """Geometry invalid for phase configuration (wrong side of the wall)."""


@dataclass(frozen=True)
class RisUnit:
    id: str
    surface_id: str
    surface_index: int
    center: tuple[float, float, float]
    normal: tuple[float, float, float]  # wall outward normal
    axis_u: tuple[float, float, float]  # wall horizontal unit
    axis_v: tuple[float, float, float]  # wall vertical unit
    width: float
    height: float
    n_x: int
    n_y: int
    spacing: float  # element pitch, lambda/2
    frequency_hz: float
    roughness: float = 1.0  # R
    efficiency: float = 0.8  # eta
    amplitude: float = 1.0  # uniform A
    phases: Optional[np.ndarray] = None  # (n_x * n_y,) radians
    phase_bits: int = 0  # 0 = continuous
    serving_sector: Optional[int] = None
    beam_index: Optional[int] = None
    target_point: Optional[tuple[float, float, float]] = None
    shifted: bool = False

    @property
    def n_elements(self) -> int:
        return self.n_x * self.n_y

    @property
    def gamma_magnitude(self) -> float:
        return self.roughness * math.sqrt(self.efficiency) * self.amplitude

    def element_positions(self) -> np.ndarray:
        """(n_elements, 3) on the wall plane; index = ix * n_y + iy."""
        c = np.asarray(self.center)
        u = np.asarray(self.axis_u)
        v = np.asarray(self.axis_v)
        ix = (np.arange(self.n_x) - (self.n_x - 1) / 2.0) * self.spacing
        iy = (np.arange(self.n_y) - (self.n_y - 1) / 2.0) * self.spacing
        gx, gy = np.meshgrid(ix, iy, indexing="ij")
        return c + gx.reshape(-1, 1) * u + gy.reshape(-1, 1) * v

    def gamma(self) -> np.ndarray:
        """Per-element complex modulation coefficients."""
        if self.phases is None:
            raise RisConfigurationError(f"RIS {self.id}: phases not configured")
        return self.gamma_magnitude * np.exp(1j * self.phases)


def place_on_wall(
    index: SpatialIndex,
    surface_id: str,
    anchor,
    aperture_width: float,
    aperture_height: float,
    wavelength_m: float,
    *,
    unit_id: str = "ris",
    roughness: float = 1.0,
    efficiency: float = 0.8,
    phase_bits: int = 0,
) -> RisUnit:
    """Instantiate an element grid on a wall, clipped and re-centred to fit.

    The aperture is clipped to the wall rectangle; the anchor shifts inward
    when the aperture would overhang.  Raises RisPlacementError when even a
    single element does not fit.
    """
    s = index.surface_index_of(surface_id) if isinstance(surface_id, str) else int(surface_id)
    origin, u, v, eu, ev, normal = index.wall_frame(s)
    anchor = np.asarray(anchor, dtype=float)
    q = anchor - origin
    if abs(float(q @ normal)) > 1e-6:
        raise RisPlacementError(f"anchor {anchor.tolist()} not on wall {surface_id!r}")
    a, b = float(q @ u), float(q @ v)
    if not (-1e-9 <= a <= eu + 1e-9 and -1e-9 <= b <= ev + 1e-9):
        raise RisPlacementError(f"anchor outside wall {surface_id!r}")

    w = min(aperture_width, eu)
    h = min(aperture_height, ev)
    spacing = wavelength_m / 2.0
    n_x = int(w / spacing)
    n_y = int(h / spacing)
    if n_x < 1 or n_y < 1:
        raise RisPlacementError(
            f"wall {surface_id!r} ({eu:.2f} x {ev:.2f} m) too small for one "
            f"{spacing:.3f} m element"
        )
    a_c = min(max(a, w / 2.0), eu - w / 2.0)
    b_c = min(max(b, h / 2.0), ev - h / 2.0)
    shifted = (
        w < aperture_width or h < aperture_height
        or abs(a_c - a) > 1e-9 or abs(b_c - b) > 1e-9
    )
    center = origin + a_c * u + b_c * v
    return RisUnit(
        id=unit_id,
        surface_id=index.surface_ids[s],
        surface_index=s,
        center=tuple(center),
        normal=tuple(normal),
        axis_u=tuple(u),
        axis_v=tuple(v),
        width=w,
        height=h,
        n_x=n_x,
        n_y=n_y,
        spacing=spacing,
        frequency_hz=SPEED_OF_LIGHT / wavelength_m,
        roughness=roughness,
        efficiency=efficiency,
        phase_bits=phase_bits,
        shifted=shifted,
    )


def configure_phases(
    ris: RisUnit,
    bs_position,
    target_point,
    frequency_hz: Optional[float] = None,
    phase_offset: float = 0.0,
) -> RisUnit:
    """Set the per-element phase profile toward a target.

    phi(r_e) cancels the incident-plus-departing propagation phase
    k*(|bs - r_e| + |r_e - target|), plus an optional global offset, so all
    element contributions add in phase at the target.
    """
    f = ris.frequency_hz if frequency_hz is None else frequency_hz
    bs = np.asarray(bs_position, dtype=float)
    tgt = np.asarray(target_point, dtype=float)
    n = np.asarray(ris.normal)
    c = np.asarray(ris.center)
    if float((bs - c) @ n) <= 0.0:
        raise RisConfigurationError(f"RIS {ris.id}: BS behind the wall")
    if float((tgt - c) @ n) <= 0.0:
        raise RisConfigurationError(f"RIS {ris.id}: target behind the wall")
    k = 2.0 * math.pi * f / SPEED_OF_LIGHT
    pos = ris.element_positions()
    d1 = np.linalg.norm(bs - pos, axis=1)
    d2 = np.linalg.norm(tgt - pos, axis=1)
    phases = np.mod(k * (d1 + d2) + phase_offset, 2.0 * math.pi)
    if ris.phase_bits > 0:
        step = 2.0 * math.pi / (2**ris.phase_bits)
        phases = np.mod(np.round(phases / step) * step, 2.0 * math.pi)
    return replace(ris, phases=phases, target_point=tuple(tgt), frequency_hz=f)


def incident_element_fields(ris: RisUnit, frame: SectorFrame, beam: np.ndarray) -> np.ndarray:
    """Physical beamformed field incident on each element, free-space from
    the BS with element patterns and array geometry applied; (E,) complex."""
    pos = ris.element_positions()
    bs = frame.sector.position
    v = pos - bs
    d1 = np.linalg.norm(v, axis=1)
    u = v / d1[:, None]
    lam = SPEED_OF_LIGHT / ris.frequency_hz
    k = 2.0 * math.pi / lam
    elem = frame.element_amplitude(u)
    # physical inter-element steering is the conjugate of the channel-vector
    # convention; the physical transmit beam for codebook column w is conj(w)
    steer = np.exp(1j * k * (u @ frame.element_positions.T))  # (E, M)
    bf = steer @ np.conj(beam)
    return elem * bf * (lam / (4.0 * math.pi * d1)) * np.exp(-1j * k * d1)


def cascade_contribution(
    ris: RisUnit,
    frame: SectorFrame,
    beam: np.ndarray,
    rx_points,
    index: SpatialIndex,
    check_los: bool = True,
) -> np.ndarray:
    """Beam-domain channel term added by the RIS at each receive point.

    Returns g (S,) to be added to the tile's conj(h) @ w scalar for the
    serving (sector, beam).  A single LoS gate at the unit centre covers the
    whole aperture; blocked geometry contributes zero.
    """
    rx = np.atleast_2d(np.asarray(rx_points, dtype=float))
    S = len(rx)
    c = np.asarray(ris.center)
    n = np.asarray(ris.normal)
    bs = frame.sector.position

    out = np.zeros(S, dtype=complex)
    if float((bs - c) @ n) <= 0.0:
        return out
    front = (rx - c) @ n > 0.0
    if check_los:
        if not index.segment_clear(bs, c, exclude=(ris.surface_index,)):
            return out
        clear = index.segment_clear_batch(
            np.broadcast_to(c, rx.shape), rx, exclude=(ris.surface_index,)
        )
        front &= clear
    live = np.flatnonzero(front)
    if len(live) == 0:
        return out

    pos = ris.element_positions()
    lam = SPEED_OF_LIGHT / ris.frequency_hz
    k = 2.0 * math.pi / lam
    inc = incident_element_fields(ris, frame, beam)  # (E,)
    gam = ris.gamma()
    v1 = pos - bs
    d1 = np.linalg.norm(v1, axis=1)
    cos_i = np.clip(-(v1 / d1[:, None]) @ n, 0.0, 1.0)

    src = inc * gam * np.sqrt(cos_i) * (lam / (4.0 * math.pi))  # (E,)
    chunk = max(1, int(2_000_000 / max(1, ris.n_elements)))
    for i0 in range(0, len(live), chunk):
        sel = live[i0 : i0 + chunk]
        v2 = rx[sel, None, :] - pos[None, :, :]  # (S', E, 3)
        d2 = np.linalg.norm(v2, axis=2)
        cos_o = np.clip(np.einsum("sek,k->se", v2, n) / d2, 0.0, 1.0)
        tau = np.einsum(
            "e,se->s", src, np.sqrt(cos_o) * np.exp(-1j * k * d2) / d2
        )
        out[sel] = np.conj(tau)
    return out


def best_alignment_offset(direct: np.ndarray, cascade: np.ndarray) -> float:
    """Global phase offset maximizing sum |direct + e^{-j x} cascade|^2.

    Applied on top of the configured profile so the RIS adds constructively
    to the pre-existing field at its target tile.
    """
    corr = complex(np.sum(direct * np.conj(cascade)))
    if corr == 0:
        return 0.0
    # cascade scales by e^{-j offset} when the profile shifts by +offset
    return float(-np.angle(corr))


def reradiation_budget(
    ris: RisUnit,
    incident: np.ndarray,
    cos_i: np.ndarray | float = 1.0,
    n_directions: int = 4000,
) -> tuple[float, float]:
    """(reradiated, intercepted) power for a passivity audit.

    Reradiated power integrates the far-field cascade pattern over the
    outward hemisphere (Fibonacci quadrature); intercepted power is the
    energy the aperture cells collect from the given incident fields.
    """
    pos = ris.element_positions()
    c = np.asarray(ris.center)
    n = np.asarray(ris.normal)
    lam = SPEED_OF_LIGHT / ris.frequency_hz
    k = 2.0 * math.pi / lam

    dirs = fibonacci_directions(n_directions)
    dirs = dirs[dirs @ n > 0.0]
    gam = ris.gamma()
    rel = pos - c
    phase = np.exp(1j * k * (dirs @ rel.T))  # (D, E)
    cos_u = np.clip(dirs @ n, 0.0, 1.0)
    src = incident * gam * np.sqrt(np.broadcast_to(cos_i, incident.shape))
    f = (phase @ src) * (lam / (4.0 * math.pi)) * np.sqrt(cos_u)
    d_omega = 4.0 * math.pi / n_directions
    reradiated = float(np.sum(np.abs(f) ** 2) * d_omega)
    cell = ris.spacing**2
    intercepted = float(np.sum(np.abs(incident) ** 2 * np.broadcast_to(cos_i, incident.shape)) * cell)
    return reradiated, intercepted


# -- deployment plan serialization -------------------------------------------


def ris_to_dict(ris: RisUnit) -> dict:
    return {
        "id": ris.id,
        "surface_id": ris.surface_id,
        "center": list(ris.center),
        "normal": list(ris.normal),
        "aperture": [ris.width, ris.height],
        "elements": [ris.n_x, ris.n_y],
        "spacing_m": ris.spacing,
        "frequency_hz": ris.frequency_hz,
        "roughness": ris.roughness,
        "efficiency": ris.efficiency,
        "serving_sector": ris.serving_sector,
        "beam_index": ris.beam_index,
        "target_point": list(ris.target_point) if ris.target_point is not None else None,
        "phases": ris.phases.tolist() if ris.phases is not None else None,
        "shifted": ris.shifted,
    }


def ris_from_dict(doc: dict, index: SpatialIndex) -> RisUnit:
    s = index.surface_index_of(doc["surface_id"])
    origin, u, v, eu, ev, normal = index.wall_frame(s)
    return RisUnit(
        id=doc["id"],
        surface_id=doc["surface_id"],
        surface_index=s,
        center=tuple(doc["center"]),
        normal=tuple(normal),
        axis_u=tuple(u),
        axis_v=tuple(v),
        width=doc["aperture"][0],
        height=doc["aperture"][1],
        n_x=doc["elements"][0],
        n_y=doc["elements"][1],
        spacing=doc["spacing_m"],
        frequency_hz=doc["frequency_hz"],
        roughness=doc["roughness"],
        efficiency=doc["efficiency"],
        phases=np.asarray(doc["phases"]) if doc.get("phases") is not None else None,
        serving_sector=doc.get("serving_sector"),
        beam_index=doc.get("beam_index"),
        target_point=tuple(doc["target_point"]) if doc.get("target_point") else None,
        shifted=bool(doc.get("shifted", False)),
    )
