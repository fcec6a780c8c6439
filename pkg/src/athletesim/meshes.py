"""Closed triangle meshes for body segments.

A mesh is (vertices, faces): float (n,3) array and int (m,3) array with
counter-clockwise winding seen from outside.  Only primitive generators
are provided; body segments are boxes and capped cylinders ("capsules")
sized from the anthropometric table.
"""

from __future__ import annotations

import numpy as np


class MeshError(ValueError):
    """Raised for open, inconsistently wound, or degenerate meshes."""


def box_mesh(size, center=(0.0, 0.0, 0.0)):
    """Axis-aligned box, size = (lx, ly, lz) full extents."""
    hx, hy, hz = 0.5 * np.asarray(size, dtype=float)
    cx, cy, cz = center
    v = np.array([
        [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
        [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
    ]) + np.array([cx, cy, cz])
    f = np.array([
        [0, 2, 1], [0, 3, 2],        # bottom (z-)
        [4, 5, 6], [4, 6, 7],        # top (z+)
        [0, 1, 5], [0, 5, 4],        # y-
        [2, 3, 7], [2, 7, 6],        # y+
        [1, 2, 6], [1, 6, 5],        # x+
        [3, 0, 4], [3, 4, 7],        # x-
    ], dtype=int)
    return v, f


def capsule_mesh(radius, length, axis="z", center=(0.0, 0.0, 0.0),
                 segments=24, cap_rings=6):
    """Cylinder of given core length with spherical end caps.

    `length` is the core (cylinder) length; total extent is length + 2r.
    """
    if radius <= 0 or length < 0:
        raise MeshError("capsule needs radius > 0 and length >= 0")
    h = 0.5 * length
    ring_angles = 2.0 * np.pi * np.arange(segments) / segments
    rows = []
    # bottom pole to bottom equator
    rows.append(np.array([[0.0, 0.0, -h - radius]]))
    for i in range(1, cap_rings + 1):
        phi = 0.5 * np.pi * i / cap_rings
        r = radius * np.sin(phi)
        z = -h - radius * np.cos(phi)
        rows.append(np.stack([r * np.cos(ring_angles),
                              r * np.sin(ring_angles),
                              np.full(segments, z)], axis=1))
    # top equator to top pole
    for i in range(1, cap_rings + 1):
        phi = 0.5 * np.pi * (1.0 - i / cap_rings)
        r = radius * np.sin(phi)
        z = h + radius * np.cos(phi)
        rows.append(np.stack([r * np.cos(ring_angles),
                              r * np.sin(ring_angles),
                              np.full(segments, z)], axis=1))
    rows.append(np.array([[0.0, 0.0, h + radius]]))

    verts = [rows[0]]
    offsets = [0]
    n = 1
    for ring in rows[1:-1]:
        offsets.append(n)
        verts.append(ring)
        n += segments
    offsets.append(n)
    verts.append(rows[-1])
    v = np.concatenate(verts, axis=0)

    faces = []
    # bottom fan (outward normals point down: wind accordingly)
    first = offsets[1]
    for j in range(segments):
        faces.append([0, first + (j + 1) % segments, first + j])
    # bands
    nrings = len(rows) - 2
    for r0 in range(nrings - 1):
        a = offsets[1 + r0]
        b = offsets[1 + r0 + 1]
        for j in range(segments):
            j1 = (j + 1) % segments
            faces.append([a + j, a + j1, b + j1])
            faces.append([a + j, b + j1, b + j])
    # top fan
    last_ring = offsets[-2]
    top = offsets[-1]
    for j in range(segments):
        faces.append([top, last_ring + j, last_ring + (j + 1) % segments])
    f = np.asarray(faces, dtype=int)

    if axis != "z" or any(center):
        R = _axis_rotation(axis)
        v = v @ R.T + np.asarray(center, dtype=float)
    return v, f


def _axis_rotation(axis):
    if axis == "z":
        return np.eye(3)
    if axis == "x":  # z -> x
        return np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    if axis == "y":  # z -> y
        return np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])
    raise MeshError(f"unknown axis {axis!r}")


def check_closed(vertices, faces):
    """Verify the mesh is closed and consistently wound.

    Every directed edge must be matched by exactly one opposite directed
    edge.  Raises MeshError naming an offending edge otherwise.
    """
    faces = np.asarray(faces)
    edges = {}
    for fi, (a, b, c) in enumerate(faces):
        for u, w in ((a, b), (b, c), (c, a)):
            if (u, w) in edges:
                raise MeshError(
                    f"edge ({u},{w}) appears twice with the same winding "
                    f"(faces {edges[(u, w)]} and {fi})")
            edges[(u, w)] = fi
    for (u, w), fi in edges.items():
        if (w, u) not in edges:
            raise MeshError(
                f"boundary edge ({u},{w}) on face {fi}: mesh is open or "
                "inconsistently wound")
