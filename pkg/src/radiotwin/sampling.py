"""Near-uniform direction sampling on the sphere."""

from __future__ import annotations

import math

import numpy as np

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


def fibonacci_directions(n: int) -> np.ndarray:
    """n unit vectors on the spherical Fibonacci lattice, (n, 3).

    Deterministic, seedless; nearest-neighbour angular spacing stays within
    ~20% of the sqrt(4*pi/n) uniform-density asymptotic.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 directions, got {n}")
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * GOLDEN_ANGLE
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
