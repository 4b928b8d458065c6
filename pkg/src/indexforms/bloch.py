"""Two-band Bloch projections on the torus and the lattice Chern number oracle."""

from __future__ import annotations

import numpy as np

from .base_forms import BaseGrid

PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


def qwz_vector(grid: BaseGrid, mass: float = 1.0) -> np.ndarray:
    """``d(s, t) = (sin s, sin t, m + cos s + cos t)`` sampled on a 2-torus grid."""
    if grid.dim != 2:
        raise ValueError("the two-band model lives on a 2-dimensional base")
    s, t = grid.coordinates()
    return np.stack([np.sin(s), np.sin(t), mass + np.cos(s) + np.cos(t)], axis=-1)


def qwz_projection(grid: BaseGrid, mass: float = 1.0) -> np.ndarray:
    """Rank-one projection ``(1 + d̂·σ)/2`` onto the upper band; shape ``grid.shape + (2, 2)``."""
    d = qwz_vector(grid, mass)
    norm = np.linalg.norm(d, axis=-1)
    if np.min(norm) < 1e-8:
        raise ValueError(f"gap closes for mass {mass}")
    dhat = d / norm[..., None]
    proj = 0.5 * np.eye(2, dtype=complex)
    for k in range(3):
        proj = proj + 0.5 * dhat[..., k, None, None] * PAULI[k]
    return proj


def projection_frames(projection: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Orthonormal frame (n × r) of the range of a projection field."""
    w, v = np.linalg.eigh(projection)
    rank = int(round(float(np.real(np.trace(projection, axis1=-2, axis2=-1)).ravel()[0])))
    if np.any(np.abs(w[..., -rank:] - 1.0) > tol) if rank else False:
        raise ValueError("input is not a projection field of constant rank")
    return v[..., -rank:]


def fhs_chern_number(projection: np.ndarray) -> float:
    """Lattice Chern number of a projection field on a periodic 2-d grid.

    Link variables are normalised determinants of frame overlaps; the
    plaquette phases are summed and divided by 2π.  The result is an integer up
    to roundoff whenever the grid resolves the curvature.
    """
    frames = projection_frames(projection)

    def link(axis):
        shifted = np.roll(frames, -1, axis=axis)
        overlap = np.einsum("...ia,...ib->...ab", np.conj(frames), shifted)
        det = np.linalg.det(overlap)
        return det / np.abs(det)

    u1 = link(0)
    u2 = link(1)
    plaquette = u1 * np.roll(u2, -1, axis=0) / (np.roll(u1, -1, axis=1) * u2)
    return float(np.sum(np.angle(plaquette)) / (2.0 * np.pi))
