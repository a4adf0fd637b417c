"""RIS deployment planning: outage clustering, candidate siting from
single-bounce scatter geometry, configure-and-audit deployment with the
60 % improvement rule, then re-clustering and re-association fallbacks.

Stage accounting never double-counts a UE: stage-1 recoveries are members
of effective first-pass clusters that cross the outage threshold, stage-2
adds re-clustered residuals, stage-3 adds residuals re-associated to an
existing unit with line of sight.  ``top_n`` is the total unit budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .clustering import Cluster, birch_cluster, rank_clusters
from .coverage import OUTAGE_THRESHOLD_DBM, CoverageResult, rsrp_dbm
from .ris import (
    RisConfigurationError,
    RisPlacementError,
    RisUnit,
    best_alignment_offset,
    cascade_contribution,
    configure_phases,
    place_on_wall,
)
from .tracer import TraceConfig, trace_sector


@dataclass(frozen=True)
class CandidateSite:
    scatter_point: tuple[float, float, float]
    surface_id: str
    surface_index: int
    source_sector: int
    distance_to_centroid: float
    los_bs_ok: bool


@dataclass(frozen=True)
class PlannerConfig:
    threshold_m: float = 15.0
    recluster_threshold_m: Optional[float] = None  # default 2/3 of threshold
    top_n: Optional[int] = None  # total RIS budget; None = unlimited
    aperture_width_m: float = 2.0
    aperture_height_m: float = 2.0
    min_improve_frac: float = 0.6
    candidate_ray_count: int = 3_000_000
    ris_roughness: float = 1.0
    ris_efficiency: float = 0.8
    branching: int = 50
    criterion: str = "rms"

    @property
    def recluster_t(self) -> float:
        if self.recluster_threshold_m is not None:
            return self.recluster_threshold_m
        return self.threshold_m * 2.0 / 3.0


@dataclass
class ClusterOutcome:
    cluster_id: int
    stage: int
    members: tuple[int, ...]  # tile indices
    centroid: tuple[float, float]
    status: str  # effective | ineffective | no-candidates | budget-exhausted
    ris_id: Optional[str] = None
    improved_fraction: float = 0.0
    candidate_count: int = 0


@dataclass
class Reassociation:
    tile: int
    ris_id: Optional[str]
    bs_site: Optional[str]
    recovered: bool


@dataclass
class DeploymentPlan:
    ris_units: list[RisUnit]
    outcomes: list[ClusterOutcome]
    reassociations: list[Reassociation]
    outage_tiles: np.ndarray
    recovered_stage: tuple[int, int, int]
    outage_count: int

    @property
    def recovered_total(self) -> int:
        return int(sum(self.recovered_stage))

    def recovery_fractions(self) -> dict:
        n = self.outage_count
        if n == 0:
            return {"stage1": 0.0, "stage2": 0.0, "stage3": 0.0, "total": 1.0, "nothing_to_do": True}
        s1, s2, s3 = self.recovered_stage
        return {
            "stage1": s1 / n,
            "stage2": s2 / n,
            "stage3": s3 / n,
            "total": (s1 + s2 + s3) / n,
            "nothing_to_do": False,
        }


def evaluate_rsrp(
    cov: CoverageResult,
    ris_units: list[RisUnit],
    tiles: np.ndarray,
) -> np.ndarray:
    """Best-server RSRP at the given tiles with RIS cascades included.

    Each unit's cascade adds coherently to its assigned (sector, beam)
    beam-domain channel; all other pairs keep their traced gains.
    """
    tiles = np.asarray(tiles, dtype=int)
    groups: dict[tuple[int, int], list[RisUnit]] = {}
    for r in ris_units:
        groups.setdefault((r.serving_sector, r.beam_index), []).append(r)
    best = np.full(len(tiles), -np.inf)
    samples = cov.grid.sample_points()[tiles]  # (K, 4, 3)
    for si, G in enumerate(cov.sector_gain):
        r = rsrp_dbm(G[tiles], cov.sectors[si].tx_power_per_subcarrier_dbm)
        for (s2, b2), units in groups.items():
            if s2 != si:
                continue
            P = cov.beam_channels[si][tiles, :, b2]  # (K, 4)
            g = np.zeros(P.shape, dtype=complex)
            w = cov.codebooks[si].beam(b2)
            for unit in units:
                g += cascade_contribution(
                    unit, cov.frames[si], w, samples.reshape(-1, 3), cov.index
                ).reshape(P.shape)
            g_post = np.mean(np.abs(P + g) ** 2, axis=1)
            r[:, b2] = rsrp_dbm(g_post, cov.sectors[si].tx_power_per_subcarrier_dbm)
        best = np.maximum(best, r.max(axis=1))
    return best


def _centroid_point(cov: CoverageResult, cluster: Cluster) -> np.ndarray:
    return np.array([cluster.centroid[0], cluster.centroid[1], cov.grid.ue_height])


def _centroid_tile(cov: CoverageResult, cluster: Cluster) -> int:
    t = cov.grid.tile_of(cluster.centroid[0], cluster.centroid[1])
    if t < 0 or cov.indoor[t]:
        return int(cluster.members[0])
    return t


def _serving_sector_of(cov: CoverageResult, tile: int) -> int:
    s = int(cov.serving_sector[tile])
    return s if s >= 0 else 0


def candidate_pathsets(cov: CoverageResult, config: PlannerConfig) -> "_CandidateTracer":
    return _CandidateTracer(cov, config)


class _CandidateTracer:
    """Per-sector scatter-only traces at the candidate ray budget, cached."""

    def __init__(self, cov: CoverageResult, config: PlannerConfig):
        self.cov = cov
        self.config = config
        self._cache: dict[int, object] = {}

    def pathset(self, sector_index: int):
        if sector_index not in self._cache:
            cfg = TraceConfig(
                ray_count=self.config.candidate_ray_count,
                max_bounces=0,
                enable_specular=False,
                enable_scatter=True,
            )
            self._cache[sector_index] = trace_sector(
                self.cov.index,
                self.cov.sectors[sector_index].position,
                cfg,
                self.cov.grid,
                self.cov.preset.carrier_frequency_hz,
            )
        return self._cache[sector_index]


def find_candidates(
    cov: CoverageResult,
    cluster: Cluster,
    tracer: _CandidateTracer,
) -> list[CandidateSite]:
    """Scatter points on walls that reach the cluster's centroid tile with a
    clear BS->point->centroid geometry, nearest first."""
    tile = _centroid_tile(cov, cluster)
    sector = _serving_sector_of(cov, tile)
    ps = tracer.pathset(sector)
    centroid = _centroid_point(cov, cluster)
    bs = cov.sectors[sector].position
    out = []
    for tpl in ps.templates_for(tile):
        if tpl.kind != "scat":
            continue
        sp = np.asarray(tpl.scatter_point)
        w = tpl.surfaces[0]
        los_bs = cov.index.segment_clear(bs, sp, exclude=(w,))
        los_rx = cov.index.segment_clear(sp, cov.grid.center(tile), exclude=(w,))
        if not los_rx:
            continue
        out.append(
            CandidateSite(
                scatter_point=tuple(sp),
                surface_id=cov.index.surface_ids[w],
                surface_index=int(w),
                source_sector=sector,
                distance_to_centroid=float(np.linalg.norm(sp - centroid)),
                los_bs_ok=bool(los_bs),
            )
        )
    out.sort(key=lambda c: (c.distance_to_centroid, c.surface_index))
    return [c for c in out if c.los_bs_ok]


def best_beam_toward(cov: CoverageResult, sector: int, point: np.ndarray) -> int:
    """Beam index maximizing free-space RSRP at a point (the RIS location)."""
    frame = cov.frames[sector]
    cb = cov.codebooks[sector]
    v = np.asarray(point, float) - frame.sector.position
    d = float(np.linalg.norm(v))
    u = v / d
    lam = cov.preset.wavelength_m
    k = 2.0 * math.pi / lam
    h = (
        (lam / (4.0 * math.pi * d))
        * frame.element_amplitude(u[None, :])[0]
        * frame.steering(u[None, :])[0]
    )
    p = np.abs(np.conj(h) @ cb.beams) ** 2
    return int(np.argmax(p))


def deploy_for_cluster(
    cov: CoverageResult,
    cluster: Cluster,
    candidates: list[CandidateSite],
    config: PlannerConfig,
    existing: list[RisUnit],
    unit_id: str,
) -> tuple[Optional[RisUnit], bool, float, int]:
    """Place, configure, and audit one RIS for a cluster.

    Walks candidates nearest-first past placement failures; the improvement
    audit (>= min_improve_frac of members strictly better) decides whether
    the configured unit is kept or rolled back.

    Returns (unit or None, effective, improved fraction, candidates tried).
    """
    lam = cov.preset.wavelength_m
    centroid = _centroid_point(cov, cluster)
    ctile = _centroid_tile(cov, cluster)
    members = np.asarray(cluster.members, dtype=int)
    tried = 0
    for cand in candidates:
        tried += 1
        try:
            ris = place_on_wall(
                cov.index, cand.surface_index, cand.scatter_point,
                config.aperture_width_m, config.aperture_height_m, lam,
                unit_id=unit_id, roughness=config.ris_roughness,
                efficiency=config.ris_efficiency,
            )
        except RisPlacementError:
            continue
        sector = cand.source_sector
        bs = cov.sectors[sector].position
        beam = best_beam_toward(cov, sector, ris.center)
        try:
            ris = configure_phases(ris, bs, centroid)
        except RisConfigurationError:
            continue
        ris = _with_assignment(ris, sector, beam)

        # global phase offset: add constructively to the pre-existing field
        # at the centroid tile
        w = cov.codebooks[sector].beam(beam)
        csamp = cov.grid.sample_points()[ctile]
        direct = cov.beam_channels[sector][ctile, :, beam]
        casc = cascade_contribution(ris, cov.frames[sector], w, csamp, cov.index)
        off = best_alignment_offset(direct, casc)
        if off != 0.0:
            ris = configure_phases(ris, bs, centroid, phase_offset=off)
            ris = _with_assignment(ris, sector, beam)

        pre_c = evaluate_rsrp(cov, existing, np.array([ctile]))[0]
        post_c = evaluate_rsrp(cov, existing + [ris], np.array([ctile]))[0]
        if not post_c > pre_c:
            return None, False, 0.0, tried
        pre_m = evaluate_rsrp(cov, existing, members)
        post_m = evaluate_rsrp(cov, existing + [ris], members)
        frac = float(np.mean(post_m > pre_m))
        if frac >= config.min_improve_frac:
            return ris, True, frac, tried
        return None, False, frac, tried
    return None, False, 0.0, tried


def _with_assignment(ris: RisUnit, sector: int, beam: int) -> RisUnit:
    from dataclasses import replace

    return replace(ris, serving_sector=sector, beam_index=beam)


def reassociate(
    cov: CoverageResult,
    residual_tiles: np.ndarray,
    deployed: list[RisUnit],
) -> list[Reassociation]:
    """Four-step re-association of residual outage UEs to deployed units.

    (1) find units with LoS to the UE, (2) find BS sites with LoS to each,
    (3) choose the unit closest to the UE, (4) record the site nearest that
    unit.  Units keep their cluster configuration; a UE counts as recovered
    only when its RSRP under the existing configuration crosses the outage
    threshold.
    """
    out: list[Reassociation] = []
    if not deployed:
        return [Reassociation(int(t), None, None, False) for t in residual_tiles]
    post = evaluate_rsrp(cov, deployed, residual_tiles)
    centers = cov.grid.centers()
    sites = {s.id: np.asarray(s.position, float) for s in cov.index.scene.bs_sites}
    for i, t in enumerate(residual_tiles):
        ue = centers[int(t)]
        visible = []
        for r in deployed:
            c = np.asarray(r.center)
            n = np.asarray(r.normal)
            if float((ue - c) @ n) <= 0.0:
                continue
            if not cov.index.segment_clear(c, ue, exclude=(r.surface_index,)):
                continue
            bs_ok = []
            for sid, pos in sites.items():
                if float((pos - c) @ n) > 0.0 and cov.index.segment_clear(pos, c, exclude=(r.surface_index,)):
                    bs_ok.append((sid, float(np.linalg.norm(pos - c))))
            if not bs_ok:
                continue
            visible.append((float(np.linalg.norm(ue - c)), r, sorted(bs_ok, key=lambda x: (x[1], x[0]))[0][0]))
        if not visible:
            out.append(Reassociation(int(t), None, None, False))
            continue
        visible.sort(key=lambda x: (x[0], x[1].id))
        dist, ris, bs_site = visible[0]
        recovered = bool(post[i] >= OUTAGE_THRESHOLD_DBM)
        out.append(Reassociation(int(t), ris.id, bs_site, recovered))
    return out


def recluster_residual(
    cov: CoverageResult,
    residual_tiles: np.ndarray,
    config: PlannerConfig,
    existing: list[RisUnit],
    tracer: _CandidateTracer,
    budget: Optional[int],
    start_cluster_id: int,
) -> tuple[list[RisUnit], list[ClusterOutcome]]:
    """Re-cluster residual outage tiles with the smaller threshold and run
    the deployment step on each new cluster; prior units stay untouched."""
    if config.recluster_t >= config.threshold_m:
        raise ValueError("re-clustering threshold must be smaller than the first-pass threshold")
    if len(residual_tiles) == 0:
        return [], []
    centers = cov.grid.centers()[residual_tiles][:, :2]
    clusters = rank_clusters(
        birch_cluster(centers, config.recluster_t, config.branching, config.criterion)
    )
    new_units: list[RisUnit] = []
    outcomes: list[ClusterOutcome] = []
    cid = start_cluster_id
    for cl in clusters:
        members = tuple(int(residual_tiles[m]) for m in cl.members)
        cl_t = Cluster(members=members, centroid=cl.centroid, radius=cl.radius, cf=cl.cf)
        if budget is not None and len(existing) + len(new_units) >= budget:
            outcomes.append(ClusterOutcome(cid, 2, members, cl.centroid, "budget-exhausted"))
            cid += 1
            continue
        cands = find_candidates(cov, cl_t, tracer)
        if not cands:
            outcomes.append(ClusterOutcome(cid, 2, members, cl.centroid, "no-candidates"))
            cid += 1
            continue
        unit, eff, frac, tried = deploy_for_cluster(
            cov, cl_t, cands, config, existing + new_units, unit_id=f"ris{cid}"
        )
        if eff:
            new_units.append(unit)
        outcomes.append(
            ClusterOutcome(
                cid, 2, members, cl.centroid,
                "effective" if eff else "ineffective",
                ris_id=unit.id if unit else None,
                improved_fraction=frac, candidate_count=len(cands),
            )
        )
        cid += 1
    return new_units, outcomes


def plan(cov: CoverageResult, config: PlannerConfig) -> DeploymentPlan:
    """Full pipeline: cluster, deploy per cluster by rank within the unit
    budget, re-cluster residuals at the smaller threshold, then re-associate
    what remains.  Deterministic end to end."""
    outage_tiles = np.flatnonzero(cov.outage)
    n_out = len(outage_tiles)
    if n_out == 0:
        return DeploymentPlan([], [], [], outage_tiles, (0, 0, 0), 0)

    tracer = _CandidateTracer(cov, config)
    centers = cov.grid.centers()[outage_tiles][:, :2]
    clusters = rank_clusters(
        birch_cluster(centers, config.threshold_m, config.branching, config.criterion)
    )

    deployed: list[RisUnit] = []
    outcomes: list[ClusterOutcome] = []
    effective_members: list[int] = []
    for cid, cl in enumerate(clusters):
        members = tuple(int(outage_tiles[m]) for m in cl.members)
        cl_t = Cluster(members=members, centroid=cl.centroid, radius=cl.radius, cf=cl.cf)
        if config.top_n is not None and len(deployed) >= config.top_n:
            outcomes.append(ClusterOutcome(cid, 1, members, cl.centroid, "budget-exhausted"))
            continue
        cands = find_candidates(cov, cl_t, tracer)
        if not cands:
            outcomes.append(ClusterOutcome(cid, 1, members, cl.centroid, "no-candidates"))
            continue
        # stage-1 audits run against the frozen pre-plan snapshot
        unit, eff, frac, _ = deploy_for_cluster(cov, cl_t, cands, config, [], unit_id=f"ris{cid}")
        if eff:
            deployed.append(unit)
            effective_members.extend(members)
        outcomes.append(
            ClusterOutcome(
                cid, 1, members, cl.centroid,
                "effective" if eff else "ineffective",
                ris_id=unit.id if unit else None,
                improved_fraction=frac, candidate_count=len(cands),
            )
        )

    post1 = evaluate_rsrp(cov, deployed, outage_tiles)
    eff_set = set(effective_members)
    rec1 = {
        int(t) for i, t in enumerate(outage_tiles)
        if post1[i] >= OUTAGE_THRESHOLD_DBM and int(t) in eff_set
    }

    residual2 = np.array([t for t in outage_tiles if int(t) not in rec1], dtype=int)
    stage2_units, outcomes2 = recluster_residual(
        cov, residual2, config, deployed, tracer,
        budget=config.top_n, start_cluster_id=len(clusters),
    )
    all_units = deployed + stage2_units
    outcomes.extend(outcomes2)
    eff2 = {t for o in outcomes2 if o.status == "effective" for t in o.members}
    if len(residual2):
        post2 = evaluate_rsrp(cov, all_units, residual2)
        rec2 = {
            int(t) for i, t in enumerate(residual2)
            if post2[i] >= OUTAGE_THRESHOLD_DBM and int(t) in eff2
        }
    else:
        rec2 = set()

    residual3 = np.array([t for t in residual2 if int(t) not in rec2], dtype=int)
    reassoc = reassociate(cov, residual3, all_units) if len(residual3) else []
    rec3 = {r.tile for r in reassoc if r.recovered}

    return DeploymentPlan(
        ris_units=all_units,
        outcomes=outcomes,
        reassociations=reassoc,
        outage_tiles=outage_tiles,
        recovered_stage=(len(rec1), len(rec2), len(rec3)),
        outage_count=n_out,
    )


def audit_plan(cov: CoverageResult, p: DeploymentPlan, config: PlannerConfig) -> dict:
    """Re-audit a finished plan from scratch.

    Checks the >= min_improve_frac rule per deployed unit against the frozen
    snapshot its stage used, the no-harm rule at effective centroids, and
    stage additivity of the recovery accounting.
    """
    by_id = {r.id: r for r in p.ris_units}
    stage1_units = [by_id[o.ris_id] for o in p.outcomes if o.stage == 1 and o.status == "effective"]
    results = {"units": [], "no_harm_ok": True, "improve_ok": True, "additive_ok": True}
    for o in p.outcomes:
        if o.status != "effective":
            continue
        unit = by_id[o.ris_id]
        existing = [] if o.stage == 1 else stage1_units
        members = np.asarray(o.members, dtype=int)
        pre = evaluate_rsrp(cov, existing, members)
        post = evaluate_rsrp(cov, existing + [unit], members)
        frac = float(np.mean(post > pre))
        ok = frac >= config.min_improve_frac
        results["units"].append({"id": unit.id, "improved_fraction": frac, "ok": ok})
        results["improve_ok"] &= ok
        ctile = cov.grid.tile_of(*o.centroid)
        if ctile < 0 or cov.indoor[ctile]:
            ctile = int(o.members[0])
        pre_c = evaluate_rsrp(cov, [], np.array([ctile]))[0]
        post_c = evaluate_rsrp(cov, p.ris_units, np.array([ctile]))[0]
        results["no_harm_ok"] &= bool(post_c >= pre_c - 0.1)
    results["additive_ok"] = p.recovered_total == sum(p.recovered_stage) and p.recovered_total <= p.outage_count
    return results
