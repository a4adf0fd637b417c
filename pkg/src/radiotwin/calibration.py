"""Material calibration against measured received power.

Measurements aggregate into 10 m x 10 m regions (>= 20 samples each);
buildings within 100 m of a region are calibrated jointly by minimizing the
squared gap between simulated and measured regional mean RSRP.  Gradients
come from central finite differences through a cached-geometry channel
evaluator (path geometry is material-independent, so nothing re-traces
inside the loop); updates use Adam in normalized parameter space with
projection to physical bounds.  One optimization pass runs per sector over
the regions that sector serves, freezing buildings calibrated earlier.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .coverage import build_coverage, resolve_pathset, rsrp_dbm
from .grid import TileGrid
from .materials import ElectromagneticMaterial
from .presets import SystemPreset
from .scene import Scene
from .spatial import build_spatial_index
from .tracer import TraceConfig, trace_sector


@dataclass
class MeasurementSet:
    positions: np.ndarray  # (N, 2)
    rsrp_dbm: np.ndarray  # (N,)
    cell_ids: list[str]
    dropped: int = 0
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.rsrp_dbm)


def load_measurements_csv(path, scene: Optional[Scene] = None) -> MeasurementSet:
    """Read `x,y,rsrp_dbm,cell_id` rows; malformed rows and positions outside
    the scene bounds are dropped and counted."""
    p = Path(path)
    xs, ys, rs, cells = [], [], [], []
    dropped = 0
    with p.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:4]] != ["x", "y", "rsrp_dbm", "cell_id"]:
            raise ValueError(f"{p}: expected header 'x,y,rsrp_dbm,cell_id'")
        for row in reader:
            if not row:
                continue
            try:
                x, y, r = float(row[0]), float(row[1]), float(row[2])
                cell = row[3].strip() if len(row) > 3 else ""
                if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(r)):
                    raise ValueError
            except (ValueError, IndexError):
                dropped += 1
                continue
            xs.append(x)
            ys.append(y)
            rs.append(r)
            cells.append(cell)
    pos = np.column_stack([xs, ys]) if xs else np.zeros((0, 2))
    rsrp = np.asarray(rs)
    if scene is not None and len(pos):
        x0, y0, x1, y1 = scene.geometry_bounds()
        keep = (pos[:, 0] >= x0) & (pos[:, 0] <= x1) & (pos[:, 1] >= y0) & (pos[:, 1] <= y1)
        dropped += int((~keep).sum())
        pos, rsrp = pos[keep], rsrp[keep]
        cells = [c for c, k in zip(cells, keep) if k]
    return MeasurementSet(pos, rsrp, cells, dropped=dropped, provenance=str(path))


@dataclass(frozen=True)
class CalibrationRegion:
    key: tuple[int, int]  # 10 m grid cell
    bounds: tuple[float, float, float, float]
    count: int
    mean_rsrp_dbm: float  # dB-domain average
    linked_buildings: tuple[int, ...]
    tiles: tuple[int, ...]  # coverage tiles inside the region


@dataclass(frozen=True)
class CalibrationConfig:
    steps_per_cell: int = 600
    learning_rate: float = 0.05
    lr_decay: float = 0.5  # multiplier applied every steps_per_cell/4 steps
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    fd_step_permittivity: float = 0.1
    fd_step_conductivity_rel: float = 0.1  # relative, floored at 0.01 S/m
    fd_step_scattering: float = 0.02
    bounds_permittivity: tuple[float, float] = (1.0, 15.0)
    bounds_conductivity: tuple[float, float] = (0.0, 5.0)
    bounds_scattering: tuple[float, float] = (0.0, 1.0)
    exclude_db: float = 15.0
    exclude_patience: int = 50
    dense_bonus_db: float = 5.0  # added when > dense_link_count buildings link
    dense_link_count: int = 10
    region_size_m: float = 10.0
    min_samples: int = 20
    link_radius_m: float = 100.0
    merge_adjacency_m: float = 50.0
    holdout_fraction: float = 0.0
    gradient_mode: str = "fd"  # or "spsa"
    # FD differences below this are float noise; Adam is scale-free, so
    # without a floor it would random-walk at an exact optimum
    gradient_floor: float = 1e-9


def aggregate_regions(
    measurements: MeasurementSet,
    scene: Scene,
    grid: TileGrid,
    config: CalibrationConfig = CalibrationConfig(),
) -> list[CalibrationRegion]:
    """Bin samples on the fixed region grid and keep well-sampled regions.

    Regions below the sample floor are discarded; the regional RSRP is the
    dB-domain mean.  Each region links every building within the link
    radius of its bounds.
    """
    if len(measurements) == 0:
        return []
    rs = config.region_size_m
    keys = np.floor(measurements.positions / rs).astype(int)
    out = []
    uniq = sorted({(int(a), int(b)) for a, b in keys})
    for key in uniq:
        sel = (keys[:, 0] == key[0]) & (keys[:, 1] == key[1])
        n = int(sel.sum())
        if n < config.min_samples:
            continue
        x0, y0 = key[0] * rs, key[1] * rs
        bounds = (x0, y0, x0 + rs, y0 + rs)
        linked = tuple(
            bi for bi, b in enumerate(scene.buildings)
            if _footprint_distance(b.footprint, bounds) <= config.link_radius_m
        )
        tiles = _region_tiles(grid, bounds)
        if not tiles:
            continue
        out.append(
            CalibrationRegion(
                key=key, bounds=bounds, count=n,
                mean_rsrp_dbm=float(np.mean(measurements.rsrp_dbm[sel])),
                linked_buildings=linked, tiles=tiles,
            )
        )
    return out


def _footprint_distance(fp: np.ndarray, bounds) -> float:
    x0, y0, x1, y1 = bounds
    dx = np.maximum.reduce([x0 - fp[:, 0], np.zeros(len(fp)), fp[:, 0] - x1])
    dy = np.maximum.reduce([y0 - fp[:, 1], np.zeros(len(fp)), fp[:, 1] - y1])
    return float(np.min(np.hypot(dx, dy)))


def _region_tiles(grid: TileGrid, bounds) -> tuple[int, ...]:
    x0, y0, x1, y1 = bounds
    out = []
    c = grid.centers()
    inside = (c[:, 0] >= x0) & (c[:, 0] < x1) & (c[:, 1] >= y0) & (c[:, 1] < y1)
    return tuple(int(t) for t in np.flatnonzero(inside))


class SectorRegionEvaluator:
    """Material-parametrized RSRP at region tiles for one sector.

    Geometry (paths, steering, delays) is traced and resolved once; only
    path amplitudes are re-evaluated per material state, so a loss
    evaluation costs milliseconds instead of a re-trace.
    """

    def __init__(self, index, scene, sector, preset, trace_config, grid, tiles):
        from .antenna import SectorFrame
        from .codebook import dft_codebook
        from .materials import SPEED_OF_LIGHT

        self.index = index
        self.tiles = np.asarray(sorted(tiles), dtype=int)
        self.tx_power = sector.tx_power_per_subcarrier_dbm
        f = preset.carrier_frequency_hz
        frame = SectorFrame(sector, preset.wavelength_m)
        cb = dft_codebook(sector.cols, sector.rows)
        ps = trace_sector(index, sector.position, trace_config, grid, f)
        tile_ids, blocks = resolve_pathset(index, ps, grid, tiles=self.tiles)
        self.frequency = f
        self.n_tiles = len(tile_ids)
        self.n_beams = cb.n_beams
        self.blocks = blocks
        self.rows = [b.rows for b in blocks]
        self.q = []
        for b in blocks:
            phase = np.exp(-2j * np.pi * f * (b.lengths / SPEED_OF_LIGHT))
            elem = frame.element_amplitude(b.dep_dirs)
            c = (phase * elem)[:, None] * frame.steering(b.dep_dirs)  # (K, E)
            self.q.append(np.conj(c) @ cb.beams)  # (K, B)

    def rsrp_per_tile(self, eps_r, sigma, scattering) -> np.ndarray:
        """Best-beam RSRP of this sector at the cached tiles, (T,) dBm."""
        y = np.zeros((self.n_tiles * 4, self.n_beams), dtype=complex)
        for b, rows, q in zip(self.blocks, self.rows, self.q):
            amps = b.amplitudes(self.index, self.frequency, eps_r=eps_r, sigma=sigma, scattering=scattering)
            np.add.at(y, rows, np.conj(amps)[:, None] * q)
        g = np.mean(np.abs(y.reshape(self.n_tiles, 4, -1)) ** 2, axis=1)
        return rsrp_dbm(g.max(axis=1), self.tx_power)


@dataclass
class ParameterGroup:
    buildings: tuple[int, ...]
    values: np.ndarray  # [eps_r, sigma, scattering]


def _material_arrays(index, scene, group_values: dict[int, np.ndarray]):
    eps = index.surface_eps.copy()
    sig = index.surface_sigma.copy()
    sca = index.surface_scattering.copy()
    for bi, vals in group_values.items():
        m = index.surface_building == bi
        eps[m], sig[m], sca[m] = vals[0], vals[1], vals[2]
    return eps, sig, sca


def calibrate(
    scene: Scene,
    measurements: MeasurementSet,
    preset: SystemPreset,
    trace_config: TraceConfig,
    config: CalibrationConfig = CalibrationConfig(),
    grid: Optional[TileGrid] = None,
) -> tuple[Scene, dict]:
    """Optimize building materials to match measured regional RSRP.

    Returns the calibrated scene and a report with per-pass trajectories,
    pre/post validation statistics, and the exclusion log.
    """
    index = build_spatial_index(scene)
    if grid is None:
        grid = TileGrid.from_bounds(scene.geometry_bounds())
    regions = aggregate_regions(measurements, scene, grid, config)
    report: dict = {
        "dropped_samples": measurements.dropped,
        "regions_total": len(regions),
        "passes": [],
        "no_op": False,
    }
    if not regions:
        report["no_op"] = True
        report["warning"] = "no region met the sample floor; scene unchanged"
        return scene, report

    train, holdout = _split_holdout(regions, config.holdout_fraction)
    report["holdout_regions"] = [r.key for r in holdout]

    cov = build_coverage(scene, preset, trace_config, grid=grid, index=index)
    sector_of_region = {}
    for r in train:
        cx, cy = (r.bounds[0] + r.bounds[2]) / 2, (r.bounds[1] + r.bounds[3]) / 2
        t = grid.tile_of(cx, cy)
        s = int(cov.serving_sector[t]) if t >= 0 else 0
        sector_of_region[r.key] = s if s >= 0 else 0

    pre_stats = validation_report(scene, measurements, preset, trace_config, config,
                                  regions=holdout or train, grid=grid, index=index)

    frozen: set[int] = set()
    current: dict[int, np.ndarray] = {}  # building -> calibrated values
    sectors = scene.resolved_sectors(preset)

    for sec in sectors:
        regs = [r for r in train if sector_of_region[r.key] == sec.index]
        if not regs:
            continue
        groups = _build_groups(scene, regs, frozen, config)
        if not groups:
            continue
        pass_report = _run_pass(
            index, scene, sec, preset, trace_config, grid, regs, groups,
            current, config,
        )
        report["passes"].append(pass_report)
        for g in groups:
            for bi in g.buildings:
                frozen.add(bi)
                current[bi] = g.values.copy()

    new_materials = {}
    for bi, vals in current.items():
        b = scene.buildings[bi]
        new_materials[b.id] = ElectromagneticMaterial(
            relative_permittivity=float(vals[0]),
            conductivity=float(vals[1]),
            scattering_coefficient=float(vals[2]),
        )
    calibrated = scene.with_materials(new_materials)

    post_stats = validation_report(calibrated, measurements, preset, trace_config, config,
                                   regions=holdout or train, grid=grid)
    report["pre"] = pre_stats
    report["post"] = post_stats
    return calibrated, report


def _split_holdout(regions, frac):
    if frac <= 0.0:
        return list(regions), []
    k = max(2, round(1.0 / frac))
    train, hold = [], []
    for i, r in enumerate(sorted(regions, key=lambda r: r.key)):
        (hold if i % k == 0 else train).append(r)
    return train, hold


def _build_groups(scene, regions, frozen, config) -> list[ParameterGroup]:
    linked = sorted({bi for r in regions for bi in r.linked_buildings if bi not in frozen})
    if not linked:
        return []
    region_sets = {
        bi: frozenset(r.key for r in regions if bi in r.linked_buildings) for bi in linked
    }
    centroids = {bi: scene.buildings[bi].footprint.mean(axis=0) for bi in linked}
    groups: list[list[int]] = []
    for bi in linked:
        placed = False
        for g in groups:
            if region_sets[g[0]] == region_sets[bi] and (
                np.linalg.norm(centroids[g[0]] - centroids[bi]) <= config.merge_adjacency_m
            ):
                g.append(bi)
                placed = True
                break
        if not placed:
            groups.append([bi])
    out = []
    for g in groups:
        m = scene.buildings[g[0]].material
        out.append(
            ParameterGroup(
                buildings=tuple(g),
                values=np.array([
                    m.relative_permittivity, m.conductivity, m.scattering_coefficient,
                ]),
            )
        )
    return out


def _run_pass(index, scene, sector, preset, trace_config, grid, regions, groups,
              current, config) -> dict:
    tiles = sorted({t for r in regions for t in r.tiles})
    ev = SectorRegionEvaluator(index, scene, sector, preset, trace_config, grid, tiles)
    tile_pos = {t: i for i, t in enumerate(ev.tiles)}
    region_rows = [np.array([tile_pos[t] for t in r.tiles]) for r in regions]
    measured = np.array([r.mean_rsrp_dbm for r in regions])
    thresholds = np.array([
        config.exclude_db + (config.dense_bonus_db if len(r.linked_buildings) > config.dense_link_count else 0.0)
        for r in regions
    ])

    lo = np.array([config.bounds_permittivity[0], config.bounds_conductivity[0], config.bounds_scattering[0]])
    hi = np.array([config.bounds_permittivity[1], config.bounds_conductivity[1], config.bounds_scattering[1]])

    theta = np.concatenate([g.values for g in groups])
    n_par = len(theta)
    span = np.tile(hi - lo, len(groups))
    lo_full = np.tile(lo, len(groups))
    hi_full = np.tile(hi, len(groups))

    active = np.ones(len(regions), dtype=bool)
    strikes = np.zeros(len(regions), dtype=int)
    excluded_log = []

    def errors_for(th):
        gv = dict(current)
        for gi, g in enumerate(groups):
            for bi in g.buildings:
                gv[bi] = th[3 * gi : 3 * gi + 3]
        eps, sig, sca = _material_arrays(index, scene, gv)
        sim = ev.rsrp_per_tile(eps, sig, sca)
        # regional mean over covered tiles; the covered set is geometric and
        # therefore identical across material states
        reg_sim = np.empty(len(region_rows))
        for i, rows in enumerate(region_rows):
            vals = sim[rows]
            vals = vals[np.isfinite(vals)]
            reg_sim[i] = np.mean(vals) if len(vals) else np.nan
        return reg_sim - measured

    def loss_for(th, act):
        err = errors_for(th)
        e = err[act]
        e = e[np.isfinite(e)]
        if len(e) == 0:
            return np.nan, err
        return float(np.mean(e**2)), err

    def fd_steps(th):
        h = np.empty(n_par)
        for gi in range(len(groups)):
            h[3 * gi + 0] = config.fd_step_permittivity
            h[3 * gi + 1] = max(config.fd_step_conductivity_rel * th[3 * gi + 1], 0.01)
            h[3 * gi + 2] = config.fd_step_scattering
        return h

    m = np.zeros(n_par)
    v = np.zeros(n_par)
    loss0, err0 = loss_for(theta, active)
    if not math.isfinite(loss0):
        raise RuntimeError(f"non-finite calibration loss at start: regions={len(regions)}")
    best_loss, best_theta = loss0, theta.copy()
    trajectory = [loss0]
    rng = np.random.default_rng(0)

    for step in range(1, config.steps_per_cell + 1):
        if config.gradient_mode == "spsa":
            h = fd_steps(theta)
            delta = rng.choice([-1.0, 1.0], size=n_par)
            tp = np.clip(theta + h * delta, lo_full, hi_full)
            tm = np.clip(theta - h * delta, lo_full, hi_full)
            lp, _ = loss_for(tp, active)
            lm, _ = loss_for(tm, active)
            grad = np.zeros(n_par)
            denom = tp - tm
            ok = np.abs(denom) > 1e-12
            grad[ok] = (lp - lm) / denom[ok]
        else:
            h = fd_steps(theta)
            grad = np.zeros(n_par)
            for i in range(n_par):
                tp = theta.copy()
                tm = theta.copy()
                tp[i] = min(theta[i] + h[i], hi_full[i])
                tm[i] = max(theta[i] - h[i], lo_full[i])
                if tp[i] == tm[i]:
                    continue
                lp, _ = loss_for(tp, active)
                lm, _ = loss_for(tm, active)
                grad[i] = (lp - lm) / (tp[i] - tm[i])

        grad[np.abs(grad) < config.gradient_floor] = 0.0
        grad_n = grad * span  # chain rule into normalized coordinates
        m = config.beta1 * m + (1 - config.beta1) * grad_n
        v = config.beta2 * v + (1 - config.beta2) * grad_n**2
        m_hat = m / (1 - config.beta1**step)
        v_hat = v / (1 - config.beta2**step)
        quarter = max(1, config.steps_per_cell // 4)
        lr = config.learning_rate * config.lr_decay ** ((step - 1) // quarter)
        theta_n = (theta - lo_full) / span
        theta_n = np.clip(theta_n - lr * m_hat / (np.sqrt(v_hat) + config.adam_eps), 0.0, 1.0)
        theta = lo_full + theta_n * span

        loss, err = loss_for(theta, active)
        if not math.isfinite(loss):
            raise RuntimeError(
                f"non-finite calibration loss at step {step}; theta={theta.tolist()}"
            )
        trajectory.append(loss)
        if loss < best_loss:
            best_loss, best_theta = loss, theta.copy()

        bad = active & (np.abs(err) > thresholds)
        strikes[bad] += 1
        strikes[active & ~bad] = 0
        for ri in np.flatnonzero(active & (strikes >= config.exclude_patience)):
            active[ri] = False
            excluded_log.append({
                "region": list(regions[ri].key),
                "step": step,
                "error_db": float(err[ri]),
                "threshold_db": float(thresholds[ri]),
            })

    theta = best_theta
    for gi, g in enumerate(groups):
        g.values = theta[3 * gi : 3 * gi + 3]

    return {
        "sector": sector.index,
        "regions": [list(r.key) for r in regions],
        "steps": config.steps_per_cell,
        "initial_loss": loss0,
        "best_loss": best_loss,
        "loss_trajectory": trajectory,
        "groups": [
            {
                "buildings": [scene.buildings[bi].id for bi in g.buildings],
                "final": {
                    "eps_r": float(g.values[0]),
                    "sigma": float(g.values[1]),
                    "scattering": float(g.values[2]),
                },
            }
            for g in groups
        ],
        "excluded": excluded_log,
    }


HISTOGRAM_EDGES = np.arange(-20.0, 21.0, 1.0)


def validation_report(
    scene: Scene,
    measurements: MeasurementSet,
    preset: SystemPreset,
    trace_config: TraceConfig,
    config: CalibrationConfig = CalibrationConfig(),
    regions: Optional[list[CalibrationRegion]] = None,
    grid: Optional[TileGrid] = None,
    index=None,
) -> dict:
    """Per-region simulated-minus-measured error statistics.

    Histogram uses fixed 1 dB bins over [-20, 20] dB with explicit
    under/overflow counts.
    """
    if index is None:
        index = build_spatial_index(scene)
    if grid is None:
        grid = TileGrid.from_bounds(scene.geometry_bounds())
    if regions is None:
        regions = aggregate_regions(measurements, scene, grid, config)
    if not regions:
        return {"regions": 0, "errors_db": [], "mean_db": None, "median_db": None,
                "std_db": None, "histogram": None}
    cov = build_coverage(scene, preset, trace_config, grid=grid, index=index)
    errors = []
    for r in regions:
        sim = cov.rsrp[list(r.tiles)]
        sim = sim[np.isfinite(sim)]
        if len(sim) == 0:
            continue
        errors.append(float(np.mean(sim)) - r.mean_rsrp_dbm)
    errors = np.asarray(errors)
    hist, _ = np.histogram(errors, bins=HISTOGRAM_EDGES)
    return {
        "regions": len(errors),
        "errors_db": [float(e) for e in errors],
        "mean_db": float(np.mean(errors)),
        "median_db": float(np.median(errors)),
        "std_db": float(np.std(errors)),
        "histogram": {
            "bin_edges_db": [float(e) for e in HISTOGRAM_EDGES],
            "counts": [int(c) for c in hist],
            "underflow": int((errors < HISTOGRAM_EDGES[0]).sum()),
            "overflow": int((errors >= HISTOGRAM_EDGES[-1]).sum()),
        },
    }
