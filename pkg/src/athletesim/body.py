"""Rigid links, joints, and articulated body assemblies.

An ArticulatedBody is a tree of rigid links connected by 1-3 DOF rotary
joints, rooted at a free-flying 6-DOF link.  All link frames are aligned
with the world frame in the zero pose; joint anchors are expressed in
the parent link frame and coincide with the child link frame origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .massprops import MassProperties

__all__ = ["RigidLink", "JointSpec", "ArticulatedBody", "MassProperties",
           "ContactSite", "WheelSite", "validate_model"]


@dataclass(frozen=True)
class RigidLink:
    name: str
    mass: float
    com: np.ndarray                 # (3,) in link frame
    inertia: np.ndarray             # (3,3) about com, link frame axes
    geometry: tuple | None = None   # optional (vertices, faces) mesh
    display_points: tuple = ()      # local endpoints for schematic drawing


@dataclass(frozen=True)
class JointSpec:
    """Rotary joint with 1-3 orthonormal axes.

    Axis order is the rotation composition order from parent to child.
    `anchor` is the joint position in the parent frame; the child frame
    origin sits at the anchor.
    """

    name: str
    parent: str
    child: str
    anchor: np.ndarray              # (3,) in parent frame
    axes: tuple                     # 1-3 unit 3-vectors, mutually orthogonal
    limits: tuple                   # per-axis (lo, hi) rad
    torque_limit: float = 300.0     # actuator clamp per axis, N*m

    @property
    def dof(self):
        return len(self.axes)


@dataclass(frozen=True)
class ContactSite:
    """Point on a link that can touch the environment."""

    link: str
    local: np.ndarray               # (3,) in link frame
    kind: str = "other"             # heel|toe|ball|wheel|hand|other
    damping_scale: float = 1.0      # scales ground damping for light parts


@dataclass(frozen=True)
class WheelSite:
    """Rolling disc contact: lowest rim point of a circle touches ground."""

    link: str
    center: np.ndarray              # axle point, link frame
    axis: np.ndarray                # wheel spin axis, link frame
    radius: float


@dataclass
class ArticulatedBody:
    name: str
    links: list                     # RigidLink, index 0 is the root
    joints: list                    # JointSpec, tree order (parents first)
    contact_sites: list = field(default_factory=list)
    wheel_sites: list = field(default_factory=list)
    free_root: bool = True

    @property
    def actuated_dof_count(self):
        return sum(j.dof for j in self.joints)

    def link_index(self, name):
        for i, l in enumerate(self.links):
            if l.name == name:
                return i
        raise KeyError(f"no link named {name!r}")

    def joint(self, name):
        for j in self.joints:
            if j.name == name:
                return j
        raise KeyError(f"no joint named {name!r}")

    def dof_names(self):
        """One name per actuated DOF, in state-vector order."""
        names = []
        for j in self.joints:
            if j.dof == 1:
                names.append(j.name)
            else:
                for axis in j.axes:
                    ax = _axis_letter(axis)
                    names.append(f"{j.name}_{ax}")
        return names

    @property
    def total_mass(self):
        return float(sum(l.mass for l in self.links))


def _axis_letter(axis):
    i = int(np.argmax(np.abs(axis)))
    return "xyz"[i]


def validate_model(body: ArticulatedBody):
    """Check every type invariant; returns a list of violation strings.

    Empty list iff the model is well formed.  Report-only: never raises.
    """
    problems = []
    link_names = [l.name for l in body.links]
    if len(set(link_names)) != len(link_names):
        problems.append("duplicate link names")

    for l in body.links:
        if l.mass < 0:
            problems.append(f"link {l.name}: negative mass {l.mass}")
        inertia = np.asarray(l.inertia, dtype=float)
        if not np.allclose(inertia, inertia.T, atol=1e-9):
            problems.append(f"link {l.name}: inertia not symmetric")
        else:
            eig = np.linalg.eigvalsh(inertia)
            if eig[0] < -1e-9:
                problems.append(f"link {l.name}: inertia not positive "
                                f"semi-definite (min eigenvalue {eig[0]:.3e})")
            else:
                a, b, c = np.sort(eig)
                if c > a + b + 1e-9 * max(c, 1e-12):
                    problems.append(
                        f"link {l.name}: principal moments violate the "
                        f"triangle inequality ({c:.4g} > {a:.4g} + {b:.4g})")

    # joint graph: every non-root link has exactly one parent; no cycles
    parent_of = {}
    for j in body.joints:
        if j.child in parent_of:
            problems.append(f"link {j.child} has two parent joints")
        parent_of[j.child] = j.parent
        if j.parent not in link_names:
            problems.append(f"joint {j.name}: unknown parent {j.parent!r}")
        if j.child not in link_names:
            problems.append(f"joint {j.name}: unknown child {j.child!r}")

    root = body.links[0].name
    if root in parent_of:
        problems.append(f"root link {root} has a parent joint")
    for name in link_names[1:]:
        if name not in parent_of:
            problems.append(f"link {name} is not connected to the tree")
    for name in link_names[1:]:
        seen = [name]
        cur = name
        while cur in parent_of:
            cur = parent_of[cur]
            if cur in seen:
                cycle = seen[seen.index(cur):] + [cur]
                problems.append("joint cycle: " + " -> ".join(cycle))
                break
            seen.append(cur)

    for j in body.joints:
        if not 1 <= j.dof <= 3:
            problems.append(f"joint {j.name}: {j.dof} axes (need 1-3)")
        axes = np.asarray(j.axes, dtype=float)
        if axes.size:
            gram = axes @ axes.T
            if not np.allclose(gram, np.eye(len(axes)), atol=1e-8):
                problems.append(f"joint {j.name}: axes not orthonormal")
        for k, (lo, hi) in enumerate(j.limits):
            if not lo < hi:
                problems.append(f"joint {j.name} axis {k}: limit lower "
                                f"{lo} not below upper {hi}")

    for s in body.contact_sites:
        if s.link not in link_names:
            problems.append(f"contact site on unknown link {s.link!r}")
    return problems
