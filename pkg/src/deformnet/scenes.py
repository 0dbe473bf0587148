"""Primitive meshes and the built-in sphere-into-cube scene."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh_core import ObjectModel


def _orient_outward(pos, tris):
    a, b, c = pos[tris[:, 0]], pos[tris[:, 1]], pos[tris[:, 2]]
    volume = np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0
    return tris if volume > 0 else tris[:, ::-1].copy()


def uv_sphere(radius: float, center=(0.0, 0.0, 0.0), n_rings: int = 32, n_segments: int = 32) -> ObjectModel:
    """Latitude/longitude sphere with poles on the z axis.

    ``n_rings`` latitude rings between the poles, ``n_segments`` vertices per
    ring: ``2 + n_rings*n_segments`` vertices, ``2*n_segments*n_rings``
    triangles (32 x 32 gives 1026 / 2048).
    """
    center = np.asarray(center, dtype=float)
    theta = np.pi * np.arange(1, n_rings + 1) / (n_rings + 1)
    phi = 2.0 * np.pi * np.arange(n_segments) / n_segments
    st, ct = np.sin(theta)[:, None], np.cos(theta)[:, None]
    rings = np.stack(
        [st * np.cos(phi)[None, :], st * np.sin(phi)[None, :], np.broadcast_to(ct, (n_rings, n_segments))],
        axis=-1,
    ).reshape(-1, 3)
    unit = np.concatenate([[[0.0, 0.0, 1.0]], rings, [[0.0, 0.0, -1.0]]])
    pos = center + radius * unit

    def ring(i, j):
        return 1 + i * n_segments + (j % n_segments)

    bottom = 1 + n_rings * n_segments
    tris = []
    for j in range(n_segments):
        tris.append((0, ring(0, j), ring(0, j + 1)))
        tris.append((bottom, ring(n_rings - 1, j + 1), ring(n_rings - 1, j)))
    for i in range(n_rings - 1):
        for j in range(n_segments):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            tris.append((a, c, d))
            tris.append((a, d, b))
    tris = np.array(tris, dtype=np.int64)
    return ObjectModel(pos, _orient_outward(pos - center, tris))


def subdivided_cube(edge: float, center=(0.0, 0.0, 0.0), n: int = 16) -> ObjectModel:
    """Axis-aligned cube whose faces are ``n x n`` grids split into triangles:
    ``6n^2 + 2`` vertices, ``12n^2`` triangles (16 gives 1538 / 3072)."""
    center = np.asarray(center, dtype=float)
    index: dict[tuple[int, int, int], int] = {}
    lattice = []

    def vid(p):
        key = tuple(int(x) for x in p)
        if key not in index:
            index[key] = len(lattice)
            lattice.append(key)
        return index[key]

    tris = []
    for axis in range(3):
        u, v = (axis + 1) % 3, (axis + 2) % 3
        for side in (0, n):
            for i in range(n):
                for j in range(n):
                    quad = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        p = [0, 0, 0]
                        p[axis], p[u], p[v] = side, i + di, j + dj
                        quad.append(vid(p))
                    a, b, c, d = quad
                    # (u, v, axis) is right-handed, so a-b-c winds toward +axis
                    if side == n:
                        tris += [(a, b, c), (a, c, d)]
                    else:
                        tris += [(a, c, b), (a, d, c)]
    grid = np.array(lattice, dtype=float)
    pos = center + edge * (grid / n - 0.5)
    return ObjectModel(pos, np.array(tris, dtype=np.int64))


@dataclass(frozen=True)
class SphereCubeScene:
    """Sphere entering the bottom face of a cube along +z."""

    sphere_radius: float = 45.0
    cube_edge: float = 90.0
    penetration_fraction: float = 0.17
    sphere_rings: int = 32
    sphere_segments: int = 32
    cube_subdivisions: int = 16

    @property
    def penetration(self) -> float:
        return self.penetration_fraction * 2.0 * self.sphere_radius

    @property
    def sphere_center(self) -> np.ndarray:
        # cube centered at the origin; sphere top sits `penetration` above the bottom face
        z = -(self.cube_edge / 2.0) + self.penetration - self.sphere_radius
        return np.array([0.0, 0.0, z])

    def sphere(self) -> ObjectModel:
        return uv_sphere(self.sphere_radius, self.sphere_center, self.sphere_rings, self.sphere_segments)

    def cube(self) -> ObjectModel:
        return subdivided_cube(self.cube_edge, (0.0, 0.0, 0.0), self.cube_subdivisions)
