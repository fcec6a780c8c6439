"""Exact mass properties of closed polyhedral meshes.

Volume, first and second moments are evaluated with the divergence
theorem, reducing each volume integral to an exact per-triangle surface
term.  Results are exact for the polyhedron (no sampling).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .meshes import check_closed


@dataclass(frozen=True)
class MassProperties:
    """Mass, center of mass, and inertia tensor about the com."""

    mass: float
    com: np.ndarray          # (3,) in mesh coordinates
    inertia: np.ndarray      # (3,3) about com, mesh axes

    def translated(self, offset):
        """Same body with com reported relative to a shifted origin."""
        return MassProperties(self.mass, self.com + np.asarray(offset, float),
                              self.inertia.copy())


def compute_mass_properties(mesh, density):
    """Mass properties of a closed triangle mesh of uniform density.

    mesh: (vertices, faces) pair.  Raises MeshError for open or
    inconsistently wound meshes, naming the offending edge.
    """
    vertices, faces = mesh
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=int)
    check_closed(vertices, faces)
    if density < 0:
        raise ValueError("density must be >= 0")

    p0 = vertices[faces[:, 0]]
    p1 = vertices[faces[:, 1]]
    p2 = vertices[faces[:, 2]]
    d = np.cross(p1 - p0, p2 - p0)          # area-weighted normals (2A n)

    def subexpr(w0, w1, w2):
        t0 = w0 + w1
        f1 = t0 + w2
        t1 = w0 * w0
        t2 = t1 + w1 * t0
        f2 = t2 + w2 * f1
        f3 = w0 * t1 + w1 * t2 + w2 * f2
        g0 = f2 + w0 * (f1 + w0)
        g1 = f2 + w1 * (f1 + w1)
        g2 = f2 + w2 * (f1 + w2)
        return f1, f2, f3, g0, g1, g2

    x0, y0, z0 = p0.T
    x1, y1, z1 = p1.T
    x2, y2, z2 = p2.T
    f1x, f2x, f3x, g0x, g1x, g2x = subexpr(x0, x1, x2)
    _, f2y, f3y, g0y, g1y, g2y = subexpr(y0, y1, y2)
    _, f2z, f3z, g0z, g1z, g2z = subexpr(z0, z1, z2)

    intg = np.array([
        np.sum(d[:, 0] * f1x) / 6.0,
        np.sum(d[:, 0] * f2x) / 24.0,
        np.sum(d[:, 1] * f2y) / 24.0,
        np.sum(d[:, 2] * f2z) / 24.0,
        np.sum(d[:, 0] * f3x) / 60.0,
        np.sum(d[:, 1] * f3y) / 60.0,
        np.sum(d[:, 2] * f3z) / 60.0,
        np.sum(d[:, 0] * (y0 * g0x + y1 * g1x + y2 * g2x)) / 120.0,
        np.sum(d[:, 1] * (z0 * g0y + z1 * g1y + z2 * g2y)) / 120.0,
        np.sum(d[:, 2] * (x0 * g0z + x1 * g1z + x2 * g2z)) / 120.0,
    ])

    volume = intg[0]
    if volume <= 0:
        raise ValueError(f"mesh volume {volume:.3e} is not positive; "
                         "faces are likely wound inside out")
    com = intg[1:4] / volume
    mass = density * volume

    cx, cy, cz = com
    ixx = density * (intg[5] + intg[6]) - mass * (cy * cy + cz * cz)
    iyy = density * (intg[4] + intg[6]) - mass * (cz * cz + cx * cx)
    izz = density * (intg[4] + intg[5]) - mass * (cx * cx + cy * cy)
    ixy = -(density * intg[7] - mass * cx * cy)
    iyz = -(density * intg[8] - mass * cy * cz)
    izx = -(density * intg[9] - mass * cz * cx)
    inertia = np.array([
        [ixx, ixy, izx],
        [ixy, iyy, iyz],
        [izx, iyz, izz],
    ])
    return MassProperties(mass=mass, com=com, inertia=inertia)


def mesh_volume(mesh):
    """Signed volume of a closed mesh (positive when wound outward)."""
    vertices, faces = mesh
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=int)
    p0 = vertices[faces[:, 0]]
    p1 = vertices[faces[:, 1]]
    p2 = vertices[faces[:, 2]]
    return float(np.einsum("ij,ij->", p0, np.cross(p1, p2)) / 6.0)
