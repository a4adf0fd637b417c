"""Spatial acceleration index: packed surface arrays and nearest-hit queries.

Buildings decompose into one rectangular wall per footprint edge plus a flat
roof polygon; the ground is an infinite plane at z=0.  Surfaces are stored in
struct-of-arrays layout so ray queries vectorize over rays and a numba kernel
can consume them directly.  Surface ids: ``<building>/wall<k>``,
``<building>/roof``, ``ground``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .scene import Scene

T_EPS = 1e-9  # relative step used to avoid re-hitting the departing surface

KIND_WALL = 0
KIND_ROOF = 1
KIND_GROUND = 2


@dataclass(frozen=True)
class Hit:
    point: np.ndarray
    surface_id: str
    surface_index: int
    normal: np.ndarray  # unit, oriented against the incoming ray
    distance: float


class SpatialIndex:
    """Immutable ray-query structure over the scene's surfaces."""

    def __init__(self, scene: Scene):
        self.scene = scene
        p0, u, v, eu, ev, n = [], [], [], [], [], []
        ids: list[str] = []
        kinds: list[int] = []
        bidx: list[int] = []
        wall_building_edge: list[tuple[int, int]] = []

        for bi, b in enumerate(scene.buildings):
            pts = b.footprint
            nv = len(pts)
            for k in range(nv):
                a, c = pts[k], pts[(k + 1) % nv]
                edge = np.array([c[0] - a[0], c[1] - a[1], 0.0])
                length = float(np.linalg.norm(edge))
                uu = edge / length
                # CCW footprint: outward wall normal is the edge rotated -90 deg.
                normal = np.array([uu[1], -uu[0], 0.0])
                p0.append(np.array([a[0], a[1], 0.0]))
                u.append(uu)
                v.append(np.array([0.0, 0.0, 1.0]))
                eu.append(length)
                ev.append(b.height)
                n.append(normal)
                ids.append(f"{b.id}/wall{k}")
                kinds.append(KIND_WALL)
                bidx.append(bi)
                wall_building_edge.append((bi, k))

        self.n_walls = len(ids)

        roof_z, roof_b, roof_start, roof_count = [], [], [], []
        rvx, rvy = [], []
        for bi, b in enumerate(scene.buildings):
            roof_z.append(b.height)
            roof_b.append(bi)
            roof_start.append(len(rvx))
            roof_count.append(len(b.footprint))
            rvx.extend(b.footprint[:, 0])
            rvy.extend(b.footprint[:, 1])
            ids.append(f"{b.id}/roof")
            kinds.append(KIND_ROOF)
            bidx.append(bi)
        self.n_roofs = len(roof_z)

        ids.append("ground")
        kinds.append(KIND_GROUND)
        bidx.append(-1)

        self.surface_ids: tuple[str, ...] = tuple(ids)
        self.surface_kind = np.asarray(kinds, dtype=np.int8)
        self.surface_building = np.asarray(bidx, dtype=np.int32)
        self.ground_index = self.n_walls + self.n_roofs
        self.n_surfaces = len(ids)

        def pack(rows, width=3):
            if not rows:
                return np.zeros((0, width), dtype=np.float64)
            return np.asarray(rows, dtype=np.float64)

        self.wall_p0 = pack(p0)
        self.wall_u = pack(u)
        self.wall_v = pack(v)
        self.wall_eu = np.asarray(eu, dtype=np.float64)
        self.wall_ev = np.asarray(ev, dtype=np.float64)
        self.wall_n = pack(n)
        self.wall_building_edge = tuple(wall_building_edge)

        self.roof_z = np.asarray(roof_z, dtype=np.float64)
        self.roof_start = np.asarray(roof_start, dtype=np.int64)
        self.roof_count = np.asarray(roof_count, dtype=np.int64)
        self.roof_vx = np.asarray(rvx, dtype=np.float64)
        self.roof_vy = np.asarray(rvy, dtype=np.float64)

        mats = [scene.buildings[bi].material if bi >= 0 else scene.ground_material for bi in bidx]
        self.surface_eps = np.array([m.relative_permittivity for m in mats])
        self.surface_sigma = np.array([m.conductivity for m in mats])
        self.surface_scattering = np.array([m.scattering_coefficient for m in mats])

    # -- queries ---------------------------------------------------------

    def surface_index_of(self, surface_id: str) -> int:
        try:
            return self.surface_ids.index(surface_id)
        except ValueError:
            raise KeyError(f"unknown surface id {surface_id!r}") from None

    def wall_frame(self, index: int):
        """(origin, u_unit, v_unit, extent_u, extent_v, outward_normal) of a wall."""
        if index >= self.n_walls:
            raise ValueError(f"surface {index} is not a wall")
        return (
            self.wall_p0[index],
            self.wall_u[index],
            self.wall_v[index],
            float(self.wall_eu[index]),
            float(self.wall_ev[index]),
            self.wall_n[index],
        )

    def first_hit_batch(
        self,
        origins: np.ndarray,
        directions: np.ndarray,
        exclude: Optional[np.ndarray] = None,
        t_min: float = 1e-6,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Nearest positive hit per ray.

        Parameters
        ----------
        origins, directions : (N, 3) arrays; directions need not be unit length.
        exclude : optional (N,) surface index excluded per ray (departing surface).
        t_min : minimum parametric distance along each ray.

        Returns
        -------
        (t, surface) where t is inf and surface -1 where nothing is hit.
        """
        o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
        d = np.atleast_2d(np.asarray(directions, dtype=np.float64))
        nray = o.shape[0]
        best_t = np.full(nray, np.inf)
        best_s = np.full(nray, -1, dtype=np.int64)

        for w in range(self.n_walls):
            nrm = self.wall_n[w]
            denom = d @ nrm
            with np.errstate(divide="ignore", invalid="ignore"):
                t = ((self.wall_p0[w] - o) @ nrm) / denom
            valid = np.isfinite(t) & (t > t_min)
            if not valid.any():
                continue
            tt = np.where(valid, t, 0.0)
            q = o + tt[:, None] * d - self.wall_p0[w]
            a = q @ self.wall_u[w]
            b = q @ self.wall_v[w]
            valid &= (a >= 0.0) & (a <= self.wall_eu[w]) & (b >= 0.0) & (b <= self.wall_ev[w])
            if exclude is not None:
                valid &= exclude != w
            upd = valid & (t < best_t)
            best_t[upd] = t[upd]
            best_s[upd] = w

        for r in range(self.n_roofs):
            si = self.n_walls + r
            dz = d[:, 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (self.roof_z[r] - o[:, 2]) / dz
            valid = np.isfinite(t) & (t > t_min)
            if not valid.any():
                continue
            px = o[:, 0] + t * d[:, 0]
            py = o[:, 1] + t * d[:, 1]
            s0, cnt = self.roof_start[r], self.roof_count[r]
            vx = self.roof_vx[s0 : s0 + cnt]
            vy = self.roof_vy[s0 : s0 + cnt]
            inside = _points_in_polygon(px, py, vx, vy)
            valid &= inside
            if exclude is not None:
                valid &= exclude != si
            upd = valid & (t < best_t)
            best_t[upd] = t[upd]
            best_s[upd] = si

        with np.errstate(divide="ignore", invalid="ignore"):
            t = -o[:, 2] / d[:, 2]
        valid = np.isfinite(t) & (t > t_min)
        if exclude is not None:
            valid &= exclude != self.ground_index
        upd = valid & (t < best_t)
        best_t[upd] = t[upd]
        best_s[upd] = self.ground_index

        return best_t, best_s

    def intersect(self, origin, direction) -> Optional[Hit]:
        """Nearest hit for a single ray, or None."""
        d = np.asarray(direction, dtype=np.float64)
        norm = float(np.linalg.norm(d))
        if norm == 0.0:
            raise ValueError("direction must be non-zero")
        d = d / norm
        o = np.asarray(origin, dtype=np.float64)
        t, s = self.first_hit_batch(o[None, :], d[None, :])
        if s[0] < 0:
            return None
        si = int(s[0])
        nrm = self.surface_normal(si)
        if float(nrm @ d) > 0:
            nrm = -nrm
        return Hit(
            point=o + t[0] * d,
            surface_id=self.surface_ids[si],
            surface_index=si,
            normal=nrm,
            distance=float(t[0]),
        )

    def surface_normal(self, index: int) -> np.ndarray:
        """Canonical (outward / upward) unit normal of a surface."""
        if index < self.n_walls:
            return self.wall_n[index].copy()
        return np.array([0.0, 0.0, 1.0])

    def segment_clear(self, a, b, exclude: tuple[int, ...] = ()) -> bool:
        """True when the open segment a->b hits no surface (endpoints excluded)."""
        return bool(self.segment_clear_batch(np.asarray(a)[None, :], np.asarray(b)[None, :], exclude)[0])

    def segment_clear_batch(
        self, a: np.ndarray, b: np.ndarray, exclude: tuple[int, ...] = ()
    ) -> np.ndarray:
        """Vectorized open-segment occlusion test; (N,) bool, True = unobstructed.

        Endpoint neighborhoods are trimmed by a small relative epsilon so
        segments that start or end exactly on a surface do not self-occlude.
        """
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        b = np.atleast_2d(np.asarray(b, dtype=np.float64))
        d = b - a
        t, s = self._first_hit_segment(a, d, 1e-6, exclude)
        blocked = (s >= 0) & (t < 1.0 - 1e-6)
        return ~blocked

    def _first_hit_segment(self, o, d, t_min, exclude):
        best_t = np.full(len(o), np.inf)
        best_s = np.full(len(o), -1, dtype=np.int64)
        excl = set(exclude)
        for w in range(self.n_walls):
            if w in excl:
                continue
            nrm = self.wall_n[w]
            denom = d @ nrm
            with np.errstate(divide="ignore", invalid="ignore"):
                t = ((self.wall_p0[w] - o) @ nrm) / denom
            valid = np.isfinite(t) & (t > t_min) & (t < best_t)
            if not valid.any():
                continue
            tt = np.where(valid, t, 0.0)
            q = o + tt[:, None] * d - self.wall_p0[w]
            a = q @ self.wall_u[w]
            b = q @ self.wall_v[w]
            valid &= (a >= 0.0) & (a <= self.wall_eu[w]) & (b >= 0.0) & (b <= self.wall_ev[w])
            best_t[valid] = t[valid]
            best_s[valid] = w
        for r in range(self.n_roofs):
            si = self.n_walls + r
            if si in excl:
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (self.roof_z[r] - o[:, 2]) / d[:, 2]
            valid = np.isfinite(t) & (t > t_min) & (t < best_t)
            if not valid.any():
                continue
            px = o[:, 0] + t * d[:, 0]
            py = o[:, 1] + t * d[:, 1]
            s0, cnt = self.roof_start[r], self.roof_count[r]
            valid &= _points_in_polygon(px, py, self.roof_vx[s0 : s0 + cnt], self.roof_vy[s0 : s0 + cnt])
            best_t[valid] = t[valid]
            best_s[valid] = si
        if self.ground_index not in excl:
            with np.errstate(divide="ignore", invalid="ignore"):
                t = -o[:, 2] / d[:, 2]
            valid = np.isfinite(t) & (t > t_min) & (t < best_t)
            best_t[valid] = t[valid]
            best_s[valid] = self.ground_index
        return best_t, best_s


def _points_in_polygon(px: np.ndarray, py: np.ndarray, vx: np.ndarray, vy: np.ndarray) -> np.ndarray:
    """Even-odd rule point-in-polygon, vectorized over points."""
    inside = np.zeros(px.shape, dtype=bool)
    n = len(vx)
    j = n - 1
    for i in range(n):
        cond = (vy[i] > py) != (vy[j] > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (vx[j] - vx[i]) * (py - vy[i]) / (vy[j] - vy[i]) + vx[i]
        crosses = cond & (px < xint)
        inside ^= crosses
        j = i
    return inside


def build_spatial_index(scene: Scene) -> SpatialIndex:
    """Construct the immutable ray-query index for a scene."""
    return SpatialIndex(scene)


def intersect(index: SpatialIndex, origin, direction) -> Optional[Hit]:
    """Nearest positive-distance hit along the ray, or None."""
    return index.intersect(origin, direction)
