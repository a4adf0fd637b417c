"""World geometry: buildings, base-station sites, and the scene file format.

Scene files are JSON with top-level keys ``buildings``, ``bs_sites`` and
optional ``ground`` / ``materials`` / ``bounds``; see docs/schemas/scene.schema.json.
All coordinates are meters, conductivities S/m.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .materials import ElectromagneticMaterial, concrete, medium_dry_ground
from .presets import SystemPreset


class SceneError(Exception):
    """Malformed or invalid scene content."""


@dataclass(frozen=True)
class SectorConfig:
    bearing_deg: float  # azimuth of the array broadside, [0, 360)
    tilt_deg: float = 0.0  # mechanical downtilt, positive = down
    rows: Optional[int] = None  # M_v; preset default when None
    cols: Optional[int] = None  # M_h
    tx_power_per_subcarrier_dbm: Optional[float] = None


@dataclass(frozen=True)
class BsSite:
    id: str
    position: tuple[float, float, float]
    sectors: tuple[SectorConfig, ...]

    def __post_init__(self):
        if not 1 <= len(self.sectors) <= 3:
            raise SceneError(f"site {self.id!r}: sites carry 1-3 sectors, got {len(self.sectors)}")


@dataclass(frozen=True)
class Building:
    id: str
    footprint: np.ndarray  # (N, 2) counter-clockwise, closed implicitly
    height: float
    material: ElectromagneticMaterial


@dataclass(frozen=True)
class ResolvedSector:
    """A sector with preset defaults applied; index is the global serving id."""

    index: int
    site_id: str
    position: np.ndarray  # (3,)
    bearing_deg: float
    tilt_deg: float
    rows: int
    cols: int
    tx_power_per_subcarrier_dbm: float

    @property
    def id(self) -> str:
        return f"{self.site_id}/{self.index}"


@dataclass(frozen=True)
class Scene:
    buildings: tuple[Building, ...]
    bs_sites: tuple[BsSite, ...]
    ground_material: ElectromagneticMaterial
    bounds: Optional[tuple[float, float, float, float]] = None  # xmin, ymin, xmax, ymax

    def resolved_sectors(self, preset: SystemPreset) -> list[ResolvedSector]:
        out = []
        for site in self.bs_sites:
            for sc in site.sectors:
                out.append(
                    ResolvedSector(
                        index=len(out),
                        site_id=site.id,
                        position=np.asarray(site.position, dtype=float),
                        bearing_deg=sc.bearing_deg,
                        tilt_deg=sc.tilt_deg,
                        rows=sc.rows if sc.rows is not None else preset.array_rows,
                        cols=sc.cols if sc.cols is not None else preset.array_cols,
                        tx_power_per_subcarrier_dbm=(
                            sc.tx_power_per_subcarrier_dbm
                            if sc.tx_power_per_subcarrier_dbm is not None
                            else preset.tx_power_per_subcarrier_dbm
                        ),
                    )
                )
        return out

    def geometry_bounds(self, margin: float = 20.0) -> tuple[float, float, float, float]:
        """Scene extent: explicit ``bounds`` if present, else geometry AABB + margin."""
        if self.bounds is not None:
            return self.bounds
        xs, ys = [], []
        for b in self.buildings:
            xs.extend(b.footprint[:, 0])
            ys.extend(b.footprint[:, 1])
        for s in self.bs_sites:
            xs.append(s.position[0])
            ys.append(s.position[1])
        if not xs:
            return (-margin, -margin, margin, margin)
        return (min(xs) - margin, min(ys) - margin, max(xs) + margin, max(ys) + margin)

    def with_materials(self, materials: dict[str, ElectromagneticMaterial]) -> "Scene":
        """Copy of this scene with material overrides for the named buildings."""
        new = tuple(
            Building(b.id, b.footprint, b.height, materials.get(b.id, b.material))
            for b in self.buildings
        )
        return Scene(new, self.bs_sites, self.ground_material, self.bounds)


def _polygon_signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_intersect(p1, p2, p3, p4) -> bool:
    """Proper intersection of open segments p1p2 and p3p4 (shared endpoints ignored)."""

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(v) < 1e-12:
            return 0
        return 1 if v > 0 else -1

    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    return o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4)


def _validate_footprint(pts: np.ndarray, bid: str) -> np.ndarray:
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise SceneError(f"building {bid!r}: footprint needs >= 3 [x, y] vertices")
    if not np.all(np.isfinite(pts)):
        raise SceneError(f"building {bid!r}: non-finite footprint coordinate")
    n = len(pts)
    # Reject degenerate repeated vertices.
    for i in range(n):
        if np.allclose(pts[i], pts[(i + 1) % n], atol=1e-9):
            raise SceneError(f"building {bid!r}: repeated consecutive vertex {i}")
    # Simple-polygon check: no two non-adjacent edges intersect.
    for i in range(n):
        a1, a2 = pts[i], pts[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            b1, b2 = pts[j], pts[(j + 1) % n]
            if _segments_intersect(a1, a2, b1, b2):
                raise SceneError(f"building {bid!r}: self-intersecting footprint (edges {i},{j})")
    area = _polygon_signed_area(pts)
    if abs(area) < 1e-9:
        raise SceneError(f"building {bid!r}: footprint has zero area")
    if area < 0:  # normalize to counter-clockwise
        pts = pts[::-1].copy()
    return pts


def _parse_material(obj, named: dict[str, ElectromagneticMaterial], ctx: str) -> ElectromagneticMaterial:
    if isinstance(obj, str):
        if obj not in named:
            raise SceneError(f"{ctx}: unknown material reference {obj!r}")
        return named[obj]
    if not isinstance(obj, dict):
        raise SceneError(f"{ctx}: material must be an object or a name")
    try:
        return ElectromagneticMaterial(
            relative_permittivity=float(obj["eps_r"]),
            conductivity=float(obj["sigma"]),
            scattering_coefficient=float(obj.get("scattering", 0.0)),
        )
    except KeyError as e:
        raise SceneError(f"{ctx}: material missing key {e}") from None
    except ValueError as e:
        raise SceneError(f"{ctx}: {e}") from None


def loads_scene(text: str, *, default_frequency_hz: float = 3.5e9) -> Scene:
    """Parse a scene from JSON text; see load_scene."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneError(f"scene JSON parse error: {e}") from None
    if not isinstance(doc, dict):
        raise SceneError("scene root must be a JSON object")

    named: dict[str, ElectromagneticMaterial] = {}
    for name, mobj in (doc.get("materials") or {}).items():
        named[name] = _parse_material(mobj, {}, f"materials[{name!r}]")

    default_mat = concrete(default_frequency_hz)
    buildings = []
    seen_ids = set()
    for i, b in enumerate(doc.get("buildings", [])):
        bid = str(b.get("id", f"b{i}"))
        if bid in seen_ids:
            raise SceneError(f"duplicate building id {bid!r}")
        seen_ids.add(bid)
        try:
            pts = np.asarray(b["footprint"], dtype=float)
        except (KeyError, ValueError):
            raise SceneError(f"building {bid!r}: missing or malformed footprint") from None
        pts = _validate_footprint(pts, bid)
        height = float(b.get("height", 0.0))
        if not (math.isfinite(height) and height > 0.0):
            raise SceneError(f"building {bid!r}: height must be > 0, got {height}")
        mat = default_mat if "material" not in b else _parse_material(
            b["material"], named, f"building {bid!r}"
        )
        buildings.append(Building(id=bid, footprint=pts, height=height, material=mat))

    sites = []
    seen_ids = set()
    for i, s in enumerate(doc.get("bs_sites", [])):
        sid = str(s.get("id", f"bs{i}"))
        if sid in seen_ids:
            raise SceneError(f"duplicate site id {sid!r}")
        seen_ids.add(sid)
        pos = s.get("position")
        if not (isinstance(pos, list) and len(pos) == 3):
            raise SceneError(f"site {sid!r}: position must be [x, y, z]")
        if float(pos[2]) <= 0:
            raise SceneError(f"site {sid!r}: antenna height must be > 0")
        sectors = []
        for j, sec in enumerate(s.get("sectors", [])):
            if "bearing_deg" not in sec:
                raise SceneError(f"site {sid!r} sector {j}: bearing_deg required")
            bearing = float(sec["bearing_deg"]) % 360.0
            sectors.append(
                SectorConfig(
                    bearing_deg=bearing,
                    tilt_deg=float(sec.get("tilt_deg", 0.0)),
                    rows=int(sec["rows"]) if "rows" in sec else None,
                    cols=int(sec["cols"]) if "cols" in sec else None,
                    tx_power_per_subcarrier_dbm=(
                        float(sec["tx_power_per_subcarrier_dbm"])
                        if "tx_power_per_subcarrier_dbm" in sec
                        else None
                    ),
                )
            )
        for j, sec in enumerate(sectors):
            if sec.rows is not None and sec.cols is not None and sec.rows * sec.cols < 1:
                raise SceneError(f"site {sid!r} sector {j}: empty array")
        sites.append(BsSite(id=sid, position=(float(pos[0]), float(pos[1]), float(pos[2])), sectors=tuple(sectors)))

    ground = medium_dry_ground() if "ground" not in doc else _parse_material(
        doc["ground"], named, "ground"
    )
    bounds = None
    if "bounds" in doc:
        bb = doc["bounds"]
        if not (isinstance(bb, list) and len(bb) == 4 and bb[0] < bb[2] and bb[1] < bb[3]):
            raise SceneError("bounds must be [xmin, ymin, xmax, ymax] with min < max")
        bounds = tuple(float(v) for v in bb)

    return Scene(tuple(buildings), tuple(sites), ground, bounds)


def load_scene(path: str | Path, *, default_frequency_hz: float = 3.5e9) -> Scene:
    """Load and validate a scene file.

    Buildings without a material entry get the concrete default evaluated
    at ``default_frequency_hz`` (conductivity is frequency dependent).
    Raises SceneError on parse or validation failure.
    """
    p = Path(path)
    if not p.is_file():
        raise SceneError(f"scene file not found: {p}")
    return loads_scene(p.read_text(), default_frequency_hz=default_frequency_hz)


def scene_to_dict(scene: Scene) -> dict:
    """Serializable form, inverse of loads_scene (materials inlined)."""
    doc: dict = {"buildings": [], "bs_sites": []}
    for b in scene.buildings:
        doc["buildings"].append(
            {
                "id": b.id,
                "footprint": [[float(x), float(y)] for x, y in b.footprint],
                "height": b.height,
                "material": {
                    "eps_r": b.material.relative_permittivity,
                    "sigma": b.material.conductivity,
                    "scattering": b.material.scattering_coefficient,
                },
            }
        )
    for s in scene.bs_sites:
        doc["bs_sites"].append(
            {
                "id": s.id,
                "position": list(s.position),
                "sectors": [
                    {
                        k: v
                        for k, v in {
                            "bearing_deg": sec.bearing_deg,
                            "tilt_deg": sec.tilt_deg,
                            "rows": sec.rows,
                            "cols": sec.cols,
                            "tx_power_per_subcarrier_dbm": sec.tx_power_per_subcarrier_dbm,
                        }.items()
                        if v is not None
                    }
                    for sec in s.sectors
                ],
            }
        )
    doc["ground"] = {
        "eps_r": scene.ground_material.relative_permittivity,
        "sigma": scene.ground_material.conductivity,
        "scattering": scene.ground_material.scattering_coefficient,
    }
    if scene.bounds is not None:
        doc["bounds"] = list(scene.bounds)
    return doc


def save_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2, sort_keys=True) + "\n")
