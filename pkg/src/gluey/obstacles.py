"""Rigid boundaries: fixed and prescribed-motion obstacles.

An obstacle is either a half-space (infinite wall with an outward
normal pointing toward the particles), a sphere, or a rigid assembly of
spheres.  Motion is prescribed as a rotation about a fixed axis, which
covers fixed obstacles (zero angular velocity), rotating mixers and
wheels.  Constraint rows are always evaluated against the obstacle pose
at the *end* of the step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import as_vec3

__all__ = [
    "HalfSpace",
    "ObstacleSet",
    "ParticleInsideObstacle",
    "RotationLaw",
    "SphereAssembly",
    "SphereObstacle",
]


class ParticleInsideObstacle(ValueError):
    """A particle center lies strictly inside an obstacle body."""


@dataclass(frozen=True)
class RotationLaw:
    """Rotation with constant angular velocity about a fixed axis."""

    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    omega: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", as_vec3(self.center))
        axis = as_vec3(self.axis)
        norm = np.linalg.norm(axis)
        if norm == 0:
            raise ValueError("rotation axis must be nonzero")
        object.__setattr__(self, "axis", axis / norm)

    def matrix(self, t: float) -> np.ndarray:
        theta = self.omega * t
        if theta == 0.0:
            return np.eye(3)
        k = self.axis
        kx = np.array([[0.0, -k[2], k[1]],
                       [k[2], 0.0, -k[0]],
                       [-k[1], k[0], 0.0]])
        return np.eye(3) + math.sin(theta) * kx + (1 - math.cos(theta)) * (kx @ kx)

    def point(self, p0, t: float) -> np.ndarray:
        return self.center + self.matrix(t) @ (as_vec3(p0) - self.center)

    def direction(self, d0, t: float) -> np.ndarray:
        return self.matrix(t) @ as_vec3(d0)


_IDENTITY = RotationLaw()


@dataclass
class HalfSpace:
    """Wall {x : (x - point) . normal <= 0}; admissible side is normal-positive."""

    point: np.ndarray
    normal: np.ndarray
    law: RotationLaw = _IDENTITY
    roughness: float = 0.0

    def __post_init__(self):
        self.point = as_vec3(self.point)
        n = as_vec3(self.normal)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValueError("half-space normal must be nonzero")
        self.normal = n / norm

    effective_radius = math.inf

    def gaps(self, positions, radii, t: float):
        """Surface gaps, outward normals and inside flags for all particles."""
        p = self.law.point(self.point, t)
        n = self.law.direction(self.normal, t)
        centers = (positions - p) @ n
        gaps = centers - radii
        normals = np.broadcast_to(n, positions.shape)
        return gaps, normals, centers < 0


@dataclass
class SphereObstacle:
    """Fixed or rotating rigid sphere."""

    center: np.ndarray
    radius: float
    law: RotationLaw = _IDENTITY
    roughness: float = 0.0

    def __post_init__(self):
        self.center = as_vec3(self.center)
        if self.radius <= 0:
            raise ValueError("obstacle sphere radius must be positive")

    @property
    def effective_radius(self) -> float:
        return self.radius

    def gaps(self, positions, radii, t: float):
        c = self.law.point(self.center, t)
        w = positions - c
        dist = np.linalg.norm(w, axis=1)
        safe = np.where(dist > 0, dist, 1.0)
        normals = w / safe[:, None]
        gaps = dist - self.radius - radii
        return gaps, normals, dist < self.radius


@dataclass
class SphereAssembly:
    """Rigid collection of spheres sharing one motion law (e.g. a wheel
    realized as a ring of spheres rotating about its axis)."""

    centers: np.ndarray           # (K, 3)
    radii: np.ndarray             # (K,) or scalar
    law: RotationLaw = _IDENTITY
    roughness: float = 0.0

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.radii = np.broadcast_to(
            np.asarray(self.radii, dtype=float), (len(self.centers),)).copy()
        if np.any(self.radii <= 0):
            raise ValueError("assembly sphere radii must be positive")

    @classmethod
    def ring(cls, center, ring_radius: float, n_spheres: int,
             sphere_radius: float, law: RotationLaw = _IDENTITY,
             roughness: float = 0.0) -> "SphereAssembly":
        """Ring of equal spheres in the x-y plane around ``center``."""
        angles = 2.0 * math.pi * np.arange(n_spheres) / n_spheres
        c = as_vec3(center)
        centers = c + ring_radius * np.stack(
            [np.cos(angles), np.sin(angles), np.zeros(n_spheres)], axis=1)
        return cls(centers=centers, radii=sphere_radius, law=law,
                   roughness=roughness)

    @classmethod
    def line(cls, start, end, n_spheres: int, sphere_radius: float,
             law: RotationLaw = _IDENTITY,
             roughness: float = 0.0) -> "SphereAssembly":
        """Equally spaced spheres along a segment (finite wall)."""
        a, b = as_vec3(start), as_vec3(end)
        frac = np.linspace(0.0, 1.0, n_spheres)[:, None]
        return cls(centers=a + frac * (b - a), radii=sphere_radius, law=law,
                   roughness=roughness)

    def members(self):
        return [SphereObstacle(self.centers[k], float(self.radii[k]),
                               law=self.law, roughness=self.roughness)
                for k in range(len(self.centers))]


@dataclass
class ObstacleSet:
    """Obstacle collection, flattened so every sphere of an assembly gets
    its own constraint unit (and hence its own adhesion bookkeeping)."""

    obstacles: list = field(default_factory=list)

    def __post_init__(self):
        units = []
        for obs in self.obstacles:
            if isinstance(obs, SphereAssembly):
                units.extend(obs.members())
            else:
                units.append(obs)
        self.units = units

    @property
    def n_units(self) -> int:
        return len(self.units)
