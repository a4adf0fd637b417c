"""Shoot-and-bounce ray tracing with exact path reconstruction.

The Fibonacci launch pass (numba kernel) discovers which bounce sequences
reach which tiles; every discovered (tile, sequence) candidate is then
re-solved exactly by mirror-image unfolding and validated against the
scene, so reflection points, lengths and Fresnel angles carry no capture
noise.  Diffuse scattering contributes single-bounce paths only: one
effective scatter point per illuminated wall per tile, chosen as the
patch maximizing the directive-lobe gain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._sbr_kernel import SEQ_BASE, sbr_trace
from .grid import TileGrid
from .materials import SPEED_OF_LIGHT, VACUUM_PERMITTIVITY
from .sampling import fibonacci_directions
from .spatial import KIND_WALL, SpatialIndex


@dataclass(frozen=True)
class TraceConfig:
    ray_count: int = 10_000_000
    max_bounces: int = 4
    enable_specular: bool = True  # also gates the direct line-of-sight path
    enable_scatter: bool = True
    # Capture sphere radius r(L) = scale * L * sqrt(4*pi/ray_count) / 2; the
    # factor 2 default covers the Fibonacci lattice's worst angular gap.
    capture_radius_scale: float = 2.0
    scatter_patch_size_m: float = 2.0
    scatter_max_patches: int = 4096
    scatter_lobe_exponent: float = 4.0
    scatter_model: str = "directive"  # or "lambertian"

    def __post_init__(self):
        if self.ray_count < 1:
            raise ValueError("ray_count must be >= 1")
        if self.max_bounces < 0:
            raise ValueError("max_bounces must be >= 0")
        if self.scatter_model not in ("directive", "lambertian"):
            raise ValueError(f"unknown scatter_model {self.scatter_model!r}")


@dataclass(frozen=True)
class Interaction:
    kind: str  # "specular" | "scatter"
    point: tuple[float, float, float]
    surface_id: Optional[str]


@dataclass(frozen=True)
class PropagationPath:
    """One discrete ray path; amplitudes exclude antenna patterns."""

    interactions: tuple[Interaction, ...]
    departure_direction: np.ndarray
    arrival_direction: np.ndarray
    total_length: float
    complex_amplitude: complex
    delay: float

    @property
    def kind(self) -> str:
        if not self.interactions:
            return "LoS"
        if any(i.kind == "scatter" for i in self.interactions):
            return "scatter"
        return "specular"


@dataclass(frozen=True)
class ChannelContribution:
    gain: complex
    departure_direction: np.ndarray
    arrival_direction: np.ndarray


def path_to_channel_contribution(path: PropagationPath, frequency_hz: float) -> ChannelContribution:
    """Complex single-frequency gain with the propagation phase applied."""
    phase = np.exp(-2j * np.pi * frequency_hz * path.delay)
    return ChannelContribution(
        gain=path.complex_amplitude * phase,
        departure_direction=path.departure_direction,
        arrival_direction=path.arrival_direction,
    )


@dataclass(frozen=True)
class PathTemplate:
    """Geometry recipe for one path, resolvable at any receiver point.

    kind "los": empty surfaces; "spec": bounce sequence of surface indices;
    "scat": single wall index plus the frozen scatter point.
    """

    kind: str
    surfaces: tuple[int, ...]
    scatter_point: Optional[tuple[float, float, float]] = None


class PathSet:
    """Per-tile de-duplicated path templates from one transmitter."""

    def __init__(self, index: SpatialIndex, grid: TileGrid, tx_position: np.ndarray,
                 frequency_hz: float, config: TraceConfig):
        self.index = index
        self.grid = grid
        self.tx_position = np.asarray(tx_position, dtype=float)
        self.frequency_hz = frequency_hz
        self.config = config
        self._templates: dict[int, list[PathTemplate]] = {}

    def add(self, tile: int, template: PathTemplate) -> None:
        self._templates.setdefault(tile, []).append(template)

    def tiles(self) -> list[int]:
        return sorted(self._templates)

    def templates_for(self, tile: int) -> tuple[PathTemplate, ...]:
        return tuple(self._templates.get(tile, ()))

    def n_paths(self) -> int:
        return sum(len(v) for v in self._templates.values())

    def paths(self, tile: int) -> tuple[PropagationPath, ...]:
        """Materialized paths at the tile centre."""
        rx = self.grid.center(tile)[None, :]
        out = []
        for tpl in self.templates_for(tile):
            p = materialize(self.index, tpl, self.tx_position, rx, self.frequency_hz, self.config)
            if p:
                out.append(p[0])
        return tuple(out)


# -- geometry helpers -------------------------------------------------------


def _surface_plane(index: SpatialIndex, s: int) -> tuple[np.ndarray, float]:
    """(unit normal n, offset d) with n.x = d on the surface plane."""
    if s < index.n_walls:
        n = index.wall_n[s]
        return n, float(n @ index.wall_p0[s])
    if s < index.n_walls + index.n_roofs:
        return np.array([0.0, 0.0, 1.0]), float(index.roof_z[s - index.n_walls])
    return np.array([0.0, 0.0, 1.0]), 0.0


def _on_surface(index: SpatialIndex, s: int, pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """In-bounds test for points already on the surface plane; (S,) bool."""
    if s < index.n_walls:
        q = pts - index.wall_p0[s]
        a = q @ index.wall_u[s]
        b = q @ index.wall_v[s]
        return (
            (a >= -tol) & (a <= index.wall_eu[s] + tol)
            & (b >= -tol) & (b <= index.wall_ev[s] + tol)
        )
    if s < index.n_walls + index.n_roofs:
        from .spatial import _points_in_polygon

        r = s - index.n_walls
        s0, cnt = index.roof_start[r], index.roof_count[r]
        return _points_in_polygon(
            pts[:, 0], pts[:, 1], index.roof_vx[s0:s0 + cnt], index.roof_vy[s0:s0 + cnt]
        )
    return np.ones(len(pts), dtype=bool)  # ground plane is unbounded


def solve_specular(
    index: SpatialIndex,
    seq: Sequence[int],
    tx: np.ndarray,
    rx: np.ndarray,
    check_occlusion: bool = True,
):
    """Exact reflection chain tx -> seq -> rx via mirror images.

    Parameters
    ----------
    seq : ordered surface indices of the reflections.
    rx : (S, 3) receiver points.

    Returns
    -------
    valid : (S,) bool
    points : (S, K, 3) reflection points
    lengths : (S,) unfolded path lengths
    cos_inc : (S, K) cosine of incidence angle per bounce
    dep : (S, 3) unit departure directions at tx
    arr : (S, 3) unit arrival directions into rx
    """
    rx = np.atleast_2d(np.asarray(rx, dtype=float))
    S = len(rx)
    K = len(seq)
    tx = np.asarray(tx, dtype=float)

    images = [tx]
    for s in seq:
        n, d = _surface_plane(index, s)
        p = images[-1]
        images.append(p - 2.0 * (p @ n - d) * n)

    valid = np.ones(S, dtype=bool)
    points = np.zeros((S, K, 3))
    cur = rx.copy()
    for k in range(K, 0, -1):
        s = seq[k - 1]
        n, d = _surface_plane(index, s)
        img = images[k]
        denom = (cur - img) @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (d - img @ n) / denom
        ok = np.isfinite(t) & (t > 1e-9) & (t < 1.0 - 1e-9)
        p = img + t[:, None] * (cur - img)
        ok &= _on_surface(index, s, p)
        valid &= ok
        points[:, k - 1, :] = p
        cur = p

    chain = np.concatenate([np.broadcast_to(tx, (S, 1, 3)), points, rx[:, None, :]], axis=1)
    segs = np.diff(chain, axis=1)  # (S, K+1, 3)
    seg_len = np.linalg.norm(segs, axis=2)
    valid &= np.all(seg_len > 1e-9, axis=1)
    lengths = seg_len.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        units = segs / seg_len[..., None]
    cos_inc = np.zeros((S, K))
    for k in range(K):
        n, _ = _surface_plane(index, seq[k])
        cos_inc[:, k] = np.abs(units[:, k, :] @ n)
    dep = units[:, 0, :]
    arr = units[:, -1, :]

    if check_occlusion and valid.any():
        for k in range(K + 1):
            excl = ()
            if k > 0:
                excl += (seq[k - 1],)
            if k < K:
                excl += (seq[k],)
            live = np.flatnonzero(valid)
            if len(live) == 0:
                break
            clear = index.segment_clear_batch(chain[live, k, :], chain[live, k + 1, :], exclude=excl)
            valid[live] &= clear

    return valid, points, lengths, cos_inc, dep, arr


def fresnel_coefficients(
    eps_r: np.ndarray,
    sigma: np.ndarray,
    cos_inc: np.ndarray,
    frequency_hz: float,
    is_wall: np.ndarray,
) -> np.ndarray:
    """Vectorized Fresnel field coefficients; TE on walls, TM on horizontal
    surfaces (exact for a vertically polarized field in the respective
    canonical geometries)."""
    eps = eps_r - 1j * sigma / (2.0 * np.pi * frequency_hz * VACUUM_PERMITTIVITY)
    cos_i = np.clip(cos_inc, 0.0, 1.0)
    sin2 = 1.0 - cos_i**2
    root = np.sqrt(eps - sin2)
    g_te = (cos_i - root) / (cos_i + root)
    g_tm = (eps * cos_i - root) / (eps * cos_i + root)
    return np.where(is_wall, g_te, g_tm)


def specular_amplitude(
    index: SpatialIndex,
    seq: Sequence[int],
    cos_inc: np.ndarray,
    lengths: np.ndarray,
    frequency_hz: float,
    eps_r: Optional[np.ndarray] = None,
    sigma: Optional[np.ndarray] = None,
    scattering: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Complex field amplitude of reflection chains: spreading x Fresnel
    products, with the (1 - s^2) diffuse power loss on the specular branch.

    Material arrays default to the scene's; passing overrides re-evaluates
    the same geometry under perturbed materials (used by calibration).
    """
    eps_r = index.surface_eps if eps_r is None else eps_r
    sigma = index.surface_sigma if sigma is None else sigma
    scattering = index.surface_scattering if scattering is None else scattering
    lam = SPEED_OF_LIGHT / frequency_hz
    amp = np.full(lengths.shape, lam / (4.0 * np.pi), dtype=complex) / np.maximum(lengths, 1e-12)
    for k, s in enumerate(seq):
        g = fresnel_coefficients(
            eps_r[s], sigma[s], cos_inc[:, k], frequency_hz,
            np.asarray(index.surface_kind[s] == KIND_WALL),
        )
        amp *= g * math.sqrt(max(0.0, 1.0 - float(scattering[s]) ** 2))
    return amp


def scatter_geometry(tx: np.ndarray, sp: np.ndarray, normal: np.ndarray, rx: np.ndarray):
    """Two-segment diffuse geometry; rx (S, 3).

    Returns (r1, u_in, cos_i, r2 (S,), u_out (S,3), cos_psi (S,), cos_out (S,)).
    """
    v1 = sp - tx
    r1 = float(np.linalg.norm(v1))
    u_in = v1 / r1
    side = -math.copysign(1.0, float(u_in @ normal))
    n_eff = side * normal  # normal on the illuminated side
    cos_i = abs(float(u_in @ normal))
    u_spec = u_in - 2.0 * float(u_in @ normal) * normal
    v2 = np.atleast_2d(rx) - sp
    r2 = np.linalg.norm(v2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        u_out = v2 / np.maximum(r2[:, None], 1e-12)
    cos_psi = np.clip(u_out @ u_spec, -1.0, 1.0)
    cos_out = u_out @ n_eff
    return r1, u_in, cos_i, r2, u_out, cos_psi, cos_out


def scatter_amplitude(
    r1: float,
    cos_i: float,
    r2: np.ndarray,
    cos_psi: np.ndarray,
    cos_out: np.ndarray,
    patch_area: float,
    s_coeff: float,
    frequency_hz: float,
    config: TraceConfig,
) -> np.ndarray:
    """Field amplitude of the effective single-bounce diffuse path.

    Power form: [dA cos_i / (4 pi r1^2)] * s^2 * lobe(psi)/norm * 1/r2^2
    * lam^2/(4 pi), i.e. energy intercepted by the patch, scattered with the
    chosen lobe, then collected by a unit-gain receiver.  Clamped to the
    free-space amplitude at the unfolded length (near-field patch guard).
    """
    lam = SPEED_OF_LIGHT / frequency_hz
    if config.scatter_model == "directive":
        alpha = config.scatter_lobe_exponent
        lobe = ((1.0 + cos_psi) / 2.0) ** alpha
        norm = 4.0 * np.pi / (alpha + 1.0)
    else:
        lobe = np.maximum(cos_out, 0.0)
        norm = np.pi
    lobe = np.where(cos_out > 0.0, lobe, 0.0)  # no transmission through the wall
    g = (
        (patch_area * cos_i / (4.0 * np.pi * r1**2))
        * (s_coeff**2)
        * (lobe / norm)
        / np.maximum(r2, 1e-12) ** 2
        * (lam**2 / (4.0 * np.pi))
    )
    amp = np.sqrt(g)
    bound = lam / (4.0 * np.pi * np.maximum(r1 + r2, 1e-12))
    return np.minimum(amp, bound)


def scatter_patch_score(r1, cos_i, r2, cos_psi, cos_out, config: TraceConfig):
    """Material-independent ranking used to pick each wall's scatter point."""
    if config.scatter_model == "directive":
        lobe = ((1.0 + cos_psi) / 2.0) ** config.scatter_lobe_exponent
    else:
        lobe = np.maximum(cos_out, 0.0)
    lobe = np.where(cos_out > 0.0, lobe, 0.0)
    return cos_i * lobe / (r1**2 * np.maximum(r2, 1e-12) ** 2)


def materialize(
    index: SpatialIndex,
    tpl: PathTemplate,
    tx: np.ndarray,
    rx: np.ndarray,
    frequency_hz: float,
    config: TraceConfig,
) -> list[PropagationPath]:
    """Resolve a template into PropagationPath objects at receiver points.

    Receivers where the template's geometry is invalid are skipped.
    """
    rx = np.atleast_2d(rx)
    out: list[PropagationPath] = []
    if tpl.kind == "los":
        v = rx - tx
        d = np.linalg.norm(v, axis=1)
        lam = SPEED_OF_LIGHT / frequency_hz
        for i in range(len(rx)):
            u = v[i] / d[i]
            out.append(
                PropagationPath(
                    interactions=(),
                    departure_direction=u,
                    arrival_direction=u,
                    total_length=float(d[i]),
                    complex_amplitude=complex(lam / (4.0 * np.pi * d[i])),
                    delay=float(d[i]) / SPEED_OF_LIGHT,
                )
            )
        return out

    if tpl.kind == "spec":
        valid, pts, lengths, cos_inc, dep, arr = solve_specular(
            index, tpl.surfaces, tx, rx, check_occlusion=False
        )
        amps = specular_amplitude(index, tpl.surfaces, cos_inc, lengths, frequency_hz)
        for i in np.flatnonzero(valid):
            inter = tuple(
                Interaction("specular", tuple(pts[i, k]), index.surface_ids[s])
                for k, s in enumerate(tpl.surfaces)
            )
            out.append(
                PropagationPath(
                    interactions=inter,
                    departure_direction=dep[i],
                    arrival_direction=arr[i],
                    total_length=float(lengths[i]),
                    complex_amplitude=complex(amps[i]),
                    delay=float(lengths[i]) / SPEED_OF_LIGHT,
                )
            )
        return out

    if tpl.kind == "scat":
        w = tpl.surfaces[0]
        sp = np.asarray(tpl.scatter_point)
        normal = index.wall_n[w]
        r1, u_in, cos_i, r2, u_out, cos_psi, cos_out = scatter_geometry(tx, sp, normal, rx)
        area = tpl_patch_area(index, w, config)
        amps = scatter_amplitude(
            r1, cos_i, r2, cos_psi, cos_out, area,
            float(index.surface_scattering[w]), frequency_hz, config,
        )
        for i in range(len(rx)):
            if cos_out[i] <= 0.0:
                continue
            length = r1 + float(r2[i])
            out.append(
                PropagationPath(
                    interactions=(Interaction("scatter", tuple(sp), index.surface_ids[w]),),
                    departure_direction=u_in,
                    arrival_direction=u_out[i],
                    total_length=length,
                    complex_amplitude=complex(amps[i]),
                    delay=length / SPEED_OF_LIGHT,
                )
            )
        return out

    raise ValueError(f"unknown template kind {tpl.kind!r}")


def _patch_grid(index: SpatialIndex, w: int, config: TraceConfig) -> tuple[int, int]:
    eu = float(index.wall_eu[w])
    ev = float(index.wall_ev[w])
    pu = max(1, round(eu / config.scatter_patch_size_m))
    pv = max(1, round(ev / config.scatter_patch_size_m))
    while pu * pv > config.scatter_max_patches:
        pu = max(1, pu // 2)
        pv = max(1, pv // 2)
        if pu == 1 and pv == 1:
            break
    return pu, pv


def tpl_patch_area(index: SpatialIndex, w: int, config: TraceConfig) -> float:
    pu, pv = _patch_grid(index, w, config)
    return (float(index.wall_eu[w]) / pu) * (float(index.wall_ev[w]) / pv)


def _decode_sequence(seqh: int, depth: int) -> tuple[int, ...]:
    seq = []
    for _ in range(depth):
        seq.append(int(seqh % SEQ_BASE) - 1)
        seqh //= SEQ_BASE
    return tuple(reversed(seq))


def trace_sector(
    index: SpatialIndex,
    tx_position,
    config: TraceConfig,
    grid: TileGrid,
    frequency_hz: float,
) -> PathSet:
    """Trace one transmitter against the tile grid.

    Returns a PathSet with, per tile: the direct path when unobstructed,
    validated specular chains up to max_bounces, and at most one diffuse
    scatter path per illuminated wall.  Deterministic and independent of
    any threading configuration.
    """
    tx = np.asarray(getattr(tx_position, "position", tx_position), dtype=float)
    ps = PathSet(index, grid, tx, frequency_hz, config)
    centers = grid.centers()

    if config.enable_specular:
        clear = index.segment_clear_batch(np.broadcast_to(tx, centers.shape), centers)
        for tile in np.flatnonzero(clear):
            ps.add(int(tile), PathTemplate("los", ()))

    need_kernel = (config.enable_specular and config.max_bounces >= 1) or config.enable_scatter
    if not need_kernel:
        return ps

    dirs = fibonacci_directions(config.ray_count)
    cap_coef = config.capture_radius_scale * math.sqrt(4.0 * math.pi / config.ray_count) / 2.0
    do_capture = config.enable_specular and config.max_bounces >= 1
    max_bounces = config.max_bounces if do_capture else 0
    captures, first_surf, first_point = sbr_trace(
        tx, dirs,
        index.wall_p0, index.wall_u, index.wall_v, index.wall_eu, index.wall_ev, index.wall_n,
        index.roof_z, index.roof_start, index.roof_count, index.roof_vx, index.roof_vy,
        grid.x0, grid.y0, grid.nx, grid.ny, grid.tile_size, grid.ue_height,
        max_bounces, cap_coef, do_capture,
    )

    if do_capture:
        by_seq: dict[tuple[int, ...], list[int]] = {}
        for (tile, seqh), depth in captures.items():
            seq = _decode_sequence(int(seqh), int(depth))
            by_seq.setdefault(seq, []).append(int(tile))
        for seq in sorted(by_seq, key=lambda s: (len(s), s)):
            tiles = sorted(by_seq[seq])
            rx = centers[tiles]
            valid, *_ = solve_specular(index, seq, tx, rx, check_occlusion=True)
            for ti, ok in zip(tiles, valid):
                if ok:
                    ps.add(ti, PathTemplate("spec", seq))

    if config.enable_scatter:
        _add_scatter_paths(ps, index, tx, first_surf, first_point, centers, config)

    return ps


def _add_scatter_paths(ps, index, tx, first_surf, first_point, centers, config):
    wall_hits = first_surf[(first_surf >= 0) & (first_surf < index.n_walls)]
    if len(wall_hits) == 0:
        return
    hit_pts = first_point[(first_surf >= 0) & (first_surf < index.n_walls)]
    n_tiles = len(centers)
    for w in np.unique(wall_hits):
        w = int(w)
        pts = hit_pts[wall_hits == w]
        q = pts - index.wall_p0[w]
        a = q @ index.wall_u[w]
        b = q @ index.wall_v[w]
        pu, pv = _patch_grid(index, w, config)
        du = float(index.wall_eu[w]) / pu
        dv = float(index.wall_ev[w]) / pv
        ia = np.clip((a / du).astype(np.int64), 0, pu - 1)
        ib = np.clip((b / dv).astype(np.int64), 0, pv - 1)
        bins = np.unique(ia * pv + ib)
        pa = (bins // pv + 0.5) * du
        pb = (bins % pv + 0.5) * dv
        sps = (
            index.wall_p0[w]
            + pa[:, None] * index.wall_u[w]
            + pb[:, None] * index.wall_v[w]
        )  # (P, 3) candidate scatter points
        normal = index.wall_n[w]

        # score every (patch, tile) pair; geometry only, material-independent
        P = len(sps)
        scores = np.zeros((P, n_tiles))
        for p in range(P):
            r1, u_in, cos_i, r2, u_out, cos_psi, cos_out = scatter_geometry(
                tx, sps[p], normal, centers
            )
            scores[p] = scatter_patch_score(r1, cos_i, r2, cos_psi, cos_out, config)
        best = np.argmax(scores, axis=0)
        has = scores[best, np.arange(n_tiles)] > 0.0
        cand_tiles = np.flatnonzero(has)
        if len(cand_tiles) == 0:
            continue
        sp_best = sps[best[cand_tiles]]
        clear_out = index.segment_clear_batch(sp_best, centers[cand_tiles], exclude=(w,))
        clear_in = index.segment_clear_batch(
            np.broadcast_to(tx, sp_best.shape), sp_best, exclude=(w,)
        )
        ok = clear_out & clear_in
        for ti, spv in zip(cand_tiles[ok], sp_best[ok]):
            ps.add(int(ti), PathTemplate("scat", (w,), tuple(spv)))
