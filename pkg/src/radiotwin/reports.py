"""Artifact emission: tile CSV, P6 heatmaps, and JSON reports.

All outputs are byte-reproducible: fixed float formatting, sorted JSON
keys, no timestamps.  The heatmap color ramp is fixed at the documented
stops (-120/-100/-80/-60 dBm) so images diff cleanly.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .coverage import CoverageResult
from .planner import DeploymentPlan
from .ris import ris_to_dict

RAMP_STOPS_DBM = (-120.0, -100.0, -80.0, -60.0)
RAMP_COLORS = ((0, 0, 96), (0, 96, 255), (255, 220, 0), (255, 0, 0))
NO_COVERAGE_COLOR = (0, 0, 0)
INDOOR_COLOR = (40, 40, 40)


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_sanitize(obj), indent=2, sort_keys=True) + "\n")


def _sanitize(obj):
    """Strict-JSON form: non-finite floats become null."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.ndarray):
        return _sanitize(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def coverage_csv(cov: CoverageResult, path) -> None:
    """One row per tile: x, y, rsrp_dbm, sector_id, beam_index, outage."""
    g = cov.grid
    lines = ["x,y,rsrp_dbm,sector_id,beam_index,outage"]
    centers = g.centers()
    for t in range(g.n_tiles):
        r = cov.rsrp[t]
        rs = "-inf" if not math.isfinite(r) else f"{r:.6f}"
        lines.append(
            f"{centers[t, 0]:.3f},{centers[t, 1]:.3f},{rs},"
            f"{int(cov.serving_sector[t])},{int(cov.serving_beam[t])},{int(cov.outage[t])}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def _ramp_color(value: float) -> tuple[int, int, int]:
    if not math.isfinite(value):
        return NO_COVERAGE_COLOR
    stops, colors = RAMP_STOPS_DBM, RAMP_COLORS
    if value <= stops[0]:
        return colors[0]
    if value >= stops[-1]:
        return colors[-1]
    for i in range(len(stops) - 1):
        if stops[i] <= value <= stops[i + 1]:
            f = (value - stops[i]) / (stops[i + 1] - stops[i])
            a, b = colors[i], colors[i + 1]
            return tuple(int(round(a[c] + f * (b[c] - a[c]))) for c in range(3))
    return colors[-1]


def heatmap_ppm(cov: CoverageResult, path, rsrp=None) -> None:
    """Binary P6 pixmap, north-up, fixed color ramp; indoor tiles dark grey."""
    g = cov.grid
    values = cov.rsrp if rsrp is None else rsrp
    buf = bytearray()
    for iy in range(g.ny - 1, -1, -1):
        for ix in range(g.nx):
            t = iy * g.nx + ix
            color = INDOOR_COLOR if cov.indoor[t] else _ramp_color(float(values[t]))
            buf.extend(color)
    header = f"P6\n{g.nx} {g.ny}\n255\n".encode()
    Path(path).write_bytes(header + bytes(buf))


def coverage_summary(cov: CoverageResult) -> dict:
    live = np.isfinite(cov.rsrp) & ~cov.indoor
    vals = cov.rsrp[live]
    pct = {}
    if len(vals):
        for q in (5, 25, 50, 75, 95):
            pct[f"p{q}"] = float(np.percentile(vals, q))
    return {
        "preset": cov.preset.name,
        "carrier_frequency_hz": cov.preset.carrier_frequency_hz,
        "noise_power_per_subcarrier_dbm": cov.preset.noise_power_per_subcarrier_dbm,
        "grid": {
            "x0": cov.grid.x0, "y0": cov.grid.y0,
            "nx": cov.grid.nx, "ny": cov.grid.ny,
            "tile_size_m": cov.grid.tile_size,
            "ue_height_m": cov.grid.ue_height,
        },
        "tiles_total": int(cov.grid.n_tiles),
        "tiles_indoor": int(cov.indoor.sum()),
        "tiles_covered": int((~cov.outage & ~cov.indoor & np.isfinite(cov.rsrp)).sum()),
        "outage_tiles": int(cov.outage.sum()),
        "outage_fraction": cov.outage_fraction,
        "rsrp_percentiles_dbm": pct,
        "sectors": [
            {"id": s.id, "index": s.index, "bearing_deg": s.bearing_deg,
             "tilt_deg": s.tilt_deg, "rows": s.rows, "cols": s.cols}
            for s in cov.sectors
        ],
    }


def plan_report(p: DeploymentPlan) -> dict:
    return {
        "ris_units": [ris_to_dict(r) for r in p.ris_units],
        "clusters": [
            {
                "id": o.cluster_id,
                "stage": o.stage,
                "status": o.status,
                "size": len(o.members),
                "centroid": list(o.centroid),
                "members": list(o.members),
                "ris_id": o.ris_id,
                "improved_fraction": o.improved_fraction,
                "candidates": o.candidate_count,
            }
            for o in p.outcomes
        ],
    }


def recovery_report(p: DeploymentPlan, pre_outage: int, post_outage: int) -> dict:
    fr = p.recovery_fractions()
    return {
        "outage_ues": p.outage_count,
        "recovered": {
            "stage1_initial": p.recovered_stage[0],
            "stage2_recluster": p.recovered_stage[1],
            "stage3_reassociation": p.recovered_stage[2],
            "total": p.recovered_total,
        },
        "fractions": fr,
        "ris_deployed": len(p.ris_units),
        "pre_plan_outage_tiles": pre_outage,
        "post_plan_outage_tiles": post_outage,
        "reassociations": [
            {"tile": r.tile, "ris_id": r.ris_id, "bs_site": r.bs_site, "recovered": r.recovered}
            for r in p.reassociations
        ],
    }


def clusters_report(clusters, grid) -> dict:
    return {
        "threshold_note": "members are coverage-grid tile indices",
        "clusters": [
            {
                "id": i,
                "size": c.size,
                "centroid": [c.centroid[0], c.centroid[1]],
                "radius_m": c.radius,
                "members": list(c.members),
            }
            for i, c in enumerate(clusters)
        ],
    }
