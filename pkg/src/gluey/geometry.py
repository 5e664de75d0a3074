"""Geometric primitives for collections of rigid spheres.

Signed distances, contact normals and sparse distance gradients for
particle/particle pairs.  All kernels are intrinsically 3D; planar
scenarios zero the third component of positions and velocities instead
of switching to a separate 2D code path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CoincidentCenters",
    "ParticleState",
    "SparseGradientRow",
    "as_vec3",
    "contact_normal",
    "distance_gradient",
    "signed_distance",
]


class CoincidentCenters(ValueError):
    """Two sphere centers coincide; the contact normal is undefined."""


def as_vec3(v) -> np.ndarray:
    """Coerce to a finite float 3-vector."""
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite component in 3-vector")
    return arr


@dataclass
class ParticleState:
    """Positions, velocities, radii, masses and roughness sizes of N spheres.

    ``planar`` restricts motion to the x-y plane by zeroing the third
    component of every position and velocity (the kernels stay 3D).
    """

    positions: np.ndarray          # (N, 3)
    velocities: np.ndarray         # (N, 3)
    radii: np.ndarray              # (N,)
    masses: np.ndarray             # (N,)
    roughness_sizes: np.ndarray | None = None   # (N,), defaults to zeros
    planar: bool = False

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        self.radii = np.atleast_1d(np.asarray(self.radii, dtype=float))
        self.masses = np.atleast_1d(np.asarray(self.masses, dtype=float))
        n = len(self.radii)
        if self.positions.shape != (n, 3) or self.velocities.shape != (n, 3):
            raise ValueError("positions and velocities must have shape (N, 3)")
        if self.masses.shape != (n,):
            raise ValueError("masses must have shape (N,)")
        if self.roughness_sizes is None:
            self.roughness_sizes = np.zeros(n)
        else:
            self.roughness_sizes = np.atleast_1d(
                np.asarray(self.roughness_sizes, dtype=float))
            if self.roughness_sizes.shape != (n,):
                raise ValueError("roughness_sizes must have shape (N,)")
        for name in ("positions", "velocities", "radii", "masses", "roughness_sizes"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite entries in {name}")
        if n and (np.any(self.radii <= 0) or np.any(self.masses <= 0)):
            raise ValueError("radii and masses must be strictly positive")
        if np.any(self.roughness_sizes < 0):
            raise ValueError("roughness sizes must be non-negative")
        if self.planar:
            self.positions[:, 2] = 0.0
            self.velocities[:, 2] = 0.0

    @property
    def count(self) -> int:
        return len(self.radii)

    def copy(self) -> "ParticleState":
        return ParticleState(
            self.positions.copy(), self.velocities.copy(), self.radii.copy(),
            self.masses.copy(), self.roughness_sizes.copy(), self.planar)


@dataclass
class SparseGradientRow:
    """Sparse gradient of one signed distance w.r.t. stacked positions.

    ``entries`` holds ``(particle index, 3-vector coefficient)`` pairs:
    two entries for a particle/particle row, one for a particle/obstacle
    row.  ``offset`` is the signed distance at assembly time.
    """

    entries: list = field(default_factory=list)
    offset: float = 0.0


def signed_distance(xi, ri: float, xj, rj: float) -> float:
    """Signed gap between two spheres: center distance minus both radii.

    Negative iff the spheres overlap; raises :class:`CoincidentCenters`
    when the centers coincide.
    """
    xi = as_vec3(xi)
    xj = as_vec3(xj)
    dist = float(np.linalg.norm(xj - xi))
    if dist == 0.0:
        raise CoincidentCenters("sphere centers coincide")
    return dist - float(ri) - float(rj)


def contact_normal(xi, xj) -> np.ndarray:
    """Unit vector pointing from center ``xi`` toward center ``xj``."""
    xi = as_vec3(xi)
    xj = as_vec3(xj)
    d = xj - xi
    dist = float(np.linalg.norm(d))
    if dist == 0.0:
        raise CoincidentCenters("sphere centers coincide")
    return d / dist


def distance_gradient(state: ParticleState, i: int, j: int) -> SparseGradientRow:
    """Gradient row of the pair gap (i, j) with the current gap as offset.

    The row satisfies the directional-derivative identity
    d/dt gap(i,j) = row . velocities.
    """
    e = contact_normal(state.positions[i], state.positions[j])
    gap = signed_distance(state.positions[i], state.radii[i],
                          state.positions[j], state.radii[j])
    return SparseGradientRow(entries=[(i, -e), (j, e.copy())], offset=gap)
