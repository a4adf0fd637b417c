"""DFT beamforming codebooks for planar arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BeamCodebook:
    """All M_h * M_v beams of a planar array, one column per beam.

    Beam (m_h, m_v) is the Kronecker product of the horizontal DFT column
    m_h and the vertical DFT column m_v; beam index = m_h * M_v + m_v and
    element index = col * M_v + row, so the same flattening applies to both.
    """

    m_h: int
    m_v: int
    beams: np.ndarray  # (n_elements, n_beams) complex, unit-norm columns

    @property
    def n_beams(self) -> int:
        return self.m_h * self.m_v

    def beam(self, index: int) -> np.ndarray:
        return self.beams[:, index]


def dft_codebook(m_h: int, m_v: int) -> BeamCodebook:
    """Orthonormal 2-D DFT codebook: kron of two 1-D DFT vector sets."""
    if m_h < 1 or m_v < 1:
        raise ValueError(f"array dimensions must be >= 1, got {m_h}x{m_v}")
    def dft_matrix(m: int) -> np.ndarray:
        k = np.arange(m)
        return np.exp(-2j * np.pi * np.outer(k, k) / m) / np.sqrt(m)

    w = np.kron(dft_matrix(m_h), dft_matrix(m_v))
    return BeamCodebook(m_h=m_h, m_v=m_v, beams=w)
