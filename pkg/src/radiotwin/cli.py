"""Command-line front end: coverage, plan, calibrate, cluster, report.

Exit codes: 0 success, 2 configuration error, 3 scene error, 4 runtime
failure.  All artifacts are byte-reproducible for identical inputs.
"""

from __future__ import annotations

import argparse
import functools
import os
import sys
from pathlib import Path

import numpy as np

from .calibration import (
    CalibrationConfig,
    MeasurementSet,
    calibrate,
    load_measurements_csv,
    validation_report,
)
from .clustering import birch_cluster, rank_clusters
from .coverage import build_coverage
from .grid import TileGrid
from .pathcache import cached_trace_sector
from .planner import PlannerConfig, evaluate_rsrp, plan
from .presets import PRESETS, get_preset
from .reports import (
    clusters_report,
    coverage_csv,
    coverage_summary,
    heatmap_ppm,
    plan_report,
    recovery_report,
    write_json,
)
from .scene import SceneError, load_scene, save_scene, scene_to_dict
from .tracer import TraceConfig

DESK_RAYS = 1_000_000
FULL_RAYS = 10_000_000
CANDIDATE_FACTOR = 3  # planner scatter budget = factor x coverage budget


class ConfigError(Exception):
    pass


def _common_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("scene", help="scene JSON file")
    p.add_argument("--preset", default="4G", help="4G, 5G or 6G (default 4G)")
    p.add_argument("--out", default="out", help="output directory (default ./out)")
    p.add_argument("--rays", type=int, default=None,
                   help=f"rays per sector (default {DESK_RAYS})")
    p.add_argument("--paper-budget", action="store_true",
                   help=f"use the full-scale {FULL_RAYS} ray budget")
    p.add_argument("--max-bounces", type=int, default=4)
    p.add_argument("--no-scatter", action="store_true", help="disable diffuse scattering")
    p.add_argument("--cache-dir", default=os.environ.get("RADIOTWIN_CACHE_DIR"),
                   help="path-cache directory (env RADIOTWIN_CACHE_DIR)")


def _load(args):
    preset_name = args.preset.upper()
    if preset_name not in PRESETS:
        raise ConfigError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
    preset = get_preset(preset_name)
    scene = load_scene(args.scene, default_frequency_hz=preset.carrier_frequency_hz)
    rays = args.rays if args.rays is not None else (FULL_RAYS if args.paper_budget else DESK_RAYS)
    if rays < 1:
        raise ConfigError("--rays must be >= 1")
    tcfg = TraceConfig(
        ray_count=rays,
        max_bounces=args.max_bounces,
        enable_scatter=not args.no_scatter,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace_fn = None
    if args.cache_dir:
        trace_fn = functools.partial(_cached_trace, Path(args.cache_dir))
    return scene, preset, tcfg, out, trace_fn


def _cached_trace(cache_dir, index, tx, config, grid, f):
    return cached_trace_sector(index, tx, config, grid, f, cache_dir)


def _planner_config(args, rays) -> PlannerConfig:
    n = args.top_n
    return PlannerConfig(
        threshold_m=args.threshold_t,
        recluster_threshold_m=args.recluster_t,
        top_n=None if n is None or n < 0 else n,
        aperture_width_m=args.aperture,
        aperture_height_m=args.aperture,
        min_improve_frac=args.min_improve_frac,
        candidate_ray_count=CANDIDATE_FACTOR * rays,
    )


def cmd_coverage(args) -> int:
    scene, preset, tcfg, out, trace_fn = _load(args)
    cov = build_coverage(scene, preset, tcfg, trace_fn=trace_fn)
    coverage_csv(cov, out / "coverage.csv")
    heatmap_ppm(cov, out / "coverage.ppm")
    write_json(coverage_summary(cov), out / "summary.json")
    print(f"coverage: {cov.grid.n_tiles} tiles, outage fraction "
          f"{cov.outage_fraction:.4f} -> {out}")
    return 0


def cmd_plan(args) -> int:
    scene, preset, tcfg, out, trace_fn = _load(args)
    cov = build_coverage(scene, preset, tcfg, trace_fn=trace_fn)
    coverage_csv(cov, out / "coverage_pre.csv")
    heatmap_ppm(cov, out / "coverage_pre.ppm")

    pcfg = _planner_config(args, tcfg.ray_count)
    p = plan(cov, pcfg)
    all_tiles = np.arange(cov.grid.n_tiles)
    post = evaluate_rsrp(cov, p.ris_units, all_tiles)
    post_outage = int(((post < -100.0) & ~cov.indoor).sum())
    write_json(plan_report(p), out / "plan.json")
    write_json(recovery_report(p, int(cov.outage.sum()), post_outage), out / "recovery.json")
    heatmap_ppm(cov, out / "coverage_post.ppm", rsrp=post)

    if args.aperture_sweep:
        apertures = sorted({float(a) for a in args.aperture_sweep.split(",")})
        lines = ["aperture_m,ris_count,recovered,outage_ues,recovery_fraction"]
        for a in apertures:
            cfg_a = PlannerConfig(
                threshold_m=pcfg.threshold_m,
                recluster_threshold_m=pcfg.recluster_threshold_m,
                top_n=pcfg.top_n,
                aperture_width_m=a, aperture_height_m=a,
                min_improve_frac=pcfg.min_improve_frac,
                candidate_ray_count=pcfg.candidate_ray_count,
            )
            pa = plan(cov, cfg_a)
            frac = pa.recovered_total / pa.outage_count if pa.outage_count else 1.0
            lines.append(f"{a:.3f},{len(pa.ris_units)},{pa.recovered_total},"
                         f"{pa.outage_count},{frac:.6f}")
        (out / "aperture_sweep.csv").write_text("\n".join(lines) + "\n")

    fr = p.recovery_fractions()
    print(f"plan: {len(p.ris_units)} RIS, recovery {fr['total']:.4f} "
          f"(stages {fr['stage1']:.4f}/{fr['stage2']:.4f}/{fr['stage3']:.4f}) -> {out}")
    return 0


def cmd_calibrate(args) -> int:
    scene, preset, tcfg, out, trace_fn = _load(args)
    ms = load_measurements_csv(args.measurements, scene=scene)
    ccfg = CalibrationConfig(
        steps_per_cell=args.steps,
        learning_rate=args.lr,
        exclude_db=args.exclude_db,
        holdout_fraction=args.holdout_frac,
    )
    calibrated, report = calibrate(scene, ms, preset, tcfg, ccfg)
    save_scene(calibrated, out / "calibrated_scene.json")
    write_json(report, out / "calibration_report.json")
    if report.get("no_op"):
        print(f"calibrate: no-op ({report.get('warning', 'no regions')}) -> {out}")
    else:
        post = report["post"]
        print(f"calibrate: {report['regions_total']} regions, post error "
              f"mean {post['mean_db']:.2f} dB std {post['std_db']:.2f} dB -> {out}")
    return 0


def cmd_cluster(args) -> int:
    scene, preset, tcfg, out, trace_fn = _load(args)
    cov = build_coverage(scene, preset, tcfg, trace_fn=trace_fn)
    outage_tiles = np.flatnonzero(cov.outage)
    pts = cov.grid.centers()[outage_tiles][:, :2]
    clusters = rank_clusters(birch_cluster(pts, args.threshold_t))
    remapped = [
        type(c)(
            members=tuple(int(outage_tiles[m]) for m in c.members),
            centroid=c.centroid, radius=c.radius, cf=c.cf,
        )
        for c in clusters
    ]
    write_json(clusters_report(remapped, cov.grid), out / "clusters.json")
    print(f"cluster: {len(outage_tiles)} outage tiles -> {len(clusters)} clusters -> {out}")
    return 0


def cmd_report(args) -> int:
    scene, preset, tcfg, out, trace_fn = _load(args)
    ms = load_measurements_csv(args.measurements, scene=scene)
    rep = validation_report(scene, ms, preset, tcfg)
    write_json(rep, out / "validation_report.json")
    if rep["regions"]:
        print(f"report: {rep['regions']} regions, mean {rep['mean_db']:.2f} dB, "
              f"std {rep['std_db']:.2f} dB -> {out}")
    else:
        print(f"report: no qualifying regions -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="radiotwin",
        description="Ray-traced coverage, material calibration, and RIS planning",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("coverage", help="compute the RSRP coverage map")
    _common_args(p)
    p.set_defaults(fn=cmd_coverage)

    p = sub.add_parser("plan", help="plan RIS deployments for outage clusters")
    _common_args(p)
    p.add_argument("--threshold-T", dest="threshold_t", type=float, default=15.0)
    p.add_argument("--recluster-T", dest="recluster_t", type=float, default=None,
                   help="fallback threshold (default 2/3 of threshold-T)")
    p.add_argument("--top-n", dest="top_n", type=int, default=None,
                   help="total RIS budget (default unlimited)")
    p.add_argument("--aperture", type=float, default=2.0, help="square aperture side [m]")
    p.add_argument("--min-improve-frac", dest="min_improve_frac", type=float, default=0.6)
    p.add_argument("--aperture-sweep", default=None,
                   help="comma list of aperture sides; writes aperture_sweep.csv")
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("calibrate", help="fit building materials to measurements")
    _common_args(p)
    p.add_argument("--measurements", required=True, help="CSV: x,y,rsrp_dbm,cell_id")
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--exclude-db", dest="exclude_db", type=float, default=15.0)
    p.add_argument("--holdout-frac", dest="holdout_frac", type=float, default=0.0)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("cluster", help="cluster outage tiles")
    _common_args(p)
    p.add_argument("--threshold-T", dest="threshold_t", type=float, default=15.0)
    p.set_defaults(fn=cmd_cluster)

    p = sub.add_parser("report", help="measured-vs-simulated error statistics")
    _common_args(p)
    p.add_argument("--measurements", required=True)
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except SceneError as e:
        print(f"scene error: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
