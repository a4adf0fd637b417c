"""Receiver tile grid: 2 m x 2 m tiles at UE height."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TileGrid:
    x0: float
    y0: float
    nx: int
    ny: int
    tile_size: float = 2.0
    ue_height: float = 1.5

    @classmethod
    def from_bounds(
        cls,
        bounds: tuple[float, float, float, float],
        tile_size: float = 2.0,
        ue_height: float = 1.5,
    ) -> "TileGrid":
        x0, y0, x1, y1 = bounds
        nx = max(1, int(math.ceil((x1 - x0) / tile_size)))
        ny = max(1, int(math.ceil((y1 - y0) / tile_size)))
        return cls(x0=x0, y0=y0, nx=nx, ny=ny, tile_size=tile_size, ue_height=ue_height)

    @property
    def n_tiles(self) -> int:
        return self.nx * self.ny

    def centers(self) -> np.ndarray:
        """(n_tiles, 3) tile centers at UE height; tile index = iy * nx + ix."""
        ix = np.arange(self.nx)
        iy = np.arange(self.ny)
        gx, gy = np.meshgrid(ix, iy)  # shape (ny, nx)
        cx = self.x0 + (gx.ravel() + 0.5) * self.tile_size
        cy = self.y0 + (gy.ravel() + 0.5) * self.tile_size
        return np.column_stack([cx, cy, np.full(cx.shape, self.ue_height)])

    def center(self, tile_index: int) -> np.ndarray:
        iy, ix = divmod(tile_index, self.nx)
        return np.array(
            [
                self.x0 + (ix + 0.5) * self.tile_size,
                self.y0 + (iy + 0.5) * self.tile_size,
                self.ue_height,
            ]
        )

    def sample_points(self) -> np.ndarray:
        """(n_tiles, 4, 3) quarter-center sample lattice used by the tile integral."""
        c = self.centers()
        q = self.tile_size / 4.0
        offs = np.array([[-q, -q, 0.0], [q, -q, 0.0], [-q, q, 0.0], [q, q, 0.0]])
        return c[:, None, :] + offs[None, :, :]

    def tile_of(self, x: float, y: float) -> int:
        """Flat tile index containing (x, y); -1 when outside the grid."""
        ix = int(math.floor((x - self.x0) / self.tile_size))
        iy = int(math.floor((y - self.y0) / self.tile_size))
        if 0 <= ix < self.nx and 0 <= iy < self.ny:
            return iy * self.nx + ix
        return -1
