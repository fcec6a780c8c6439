"""Forward dynamics engine: model compilation, environment, simulation.

Multi-DOF rotary joints are expanded into chains of single-axis bodies with
massless intermediate links, which keeps the articulated-body recursion
branch-free per DOF.  A simulation may hold several independent characters
(trees) in one state vector; they interact only through the environment.

Internal root velocity convention is body-frame [omega; v_origin]; the
public GeneralizedState carries world-frame root velocities.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .body import ArticulatedBody
from .geometry import quat_normalize, quat_to_mat

GRAVITY = 9.81

_KIND_CODES = {"heel": kernels.KIND_HEEL, "toe": kernels.KIND_TOE,
               "ball": kernels.KIND_BALL, "hand": kernels.KIND_HAND,
               "wheel": kernels.KIND_WHEEL, "other": kernels.KIND_OTHER}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


class SimulationError(RuntimeError):
    """Raised when the state leaves the finite domain; carries a dump."""

    def __init__(self, message, last_good_state=None):
        super().__init__(message)
        self.last_good_state = last_good_state


# ------------------------------------------------------------- state type

@dataclass
class GeneralizedState:
    """Full kinematic state of one character."""

    root_position: np.ndarray           # (3,) m, world
    root_orientation: np.ndarray        # (4,) unit quaternion (w,x,y,z)
    joint_angles: np.ndarray            # (n_act,) rad
    root_linear_vel: np.ndarray         # (3,) m/s, world frame
    root_angular_vel: np.ndarray        # (3,) rad/s, world frame
    joint_rates: np.ndarray             # (n_act,) rad/s
    time: float = 0.0

    def copy(self):
        return GeneralizedState(
            self.root_position.copy(), self.root_orientation.copy(),
            self.joint_angles.copy(), self.root_linear_vel.copy(),
            self.root_angular_vel.copy(), self.joint_rates.copy(), self.time)

    def validate(self, n_act):
        if abs(np.linalg.norm(self.root_orientation) - 1.0) > 1e-9:
            raise ValueError("root orientation quaternion not normalized")
        if len(self.joint_angles) != n_act or len(self.joint_rates) != n_act:
            raise ValueError(f"state has {len(self.joint_angles)} joint angles, "
                             f"model expects {n_act}")


# ------------------------------------------------------------ environment

@dataclass
class GroundModel:
    normal_stiffness: float = 75e3      # N/m
    normal_damping: float = 1e3         # N*s/m
    friction_coefficient: float = 1.0
    stiffness_scale: float = 1.0        # 1 = hard ground, < 1 = soft
    slip_regularization: float = 0.1    # m/s, wheel-creep friction smoothing

    def __post_init__(self):
        if self.normal_stiffness <= 0:
            raise ValueError("ground stiffness must be > 0")
        if self.normal_damping < 0:
            raise ValueError("ground damping must be >= 0")
        if not 0 <= self.friction_coefficient <= 2:
            raise ValueError("friction coefficient outside [0, 2]")
        if not 0 < self.stiffness_scale <= 1:
            raise ValueError("stiffness scale outside (0, 1]")


@dataclass
class MatRegion:
    """Axis-aligned soft patch overriding the ground within its rectangle."""
    x_range: tuple
    y_range: tuple
    stiffness_scale: float
    top_z: float = 0.0


@dataclass
class BoxObstacle:
    """Solid axis-aligned box (e.g. a vaulting horse body)."""
    center: tuple
    size: tuple
    stiffness_scale: float = 1.0

    @property
    def bounds(self):
        c = np.asarray(self.center, float)
        h = 0.5 * np.asarray(self.size, float)
        return c - h, c + h


@dataclass
class Springboard:
    """Sprung deck: a plane region whose height rides on an internal
    spring-damper driven by the total normal load on it."""
    x_range: tuple
    y_range: tuple
    top_z: float = 0.12
    stiffness: float = 32e3             # N/m
    damping: float = 180.0              # N*s/m
    moving_mass: float = 8.0            # kg


@dataclass
class AttachmentSpring:
    """Zero-rest-length point-to-point spring; link_b None pins to world."""
    name: str
    link_a: str
    point_a: tuple
    link_b: str | None
    point_b: tuple                      # world point when link_b is None
    stiffness: float
    damping: float
    active: bool = True
    character_a: int = 0
    character_b: int = 0


@dataclass
class GearCoupling:
    """Elastic transmission between two 1-DOF joints (crank -> wheel)."""
    joint_a: str
    joint_b: str
    ratio: float
    stiffness: float = 600.0
    damping: float = 12.0
    character: int = 0


@dataclass
class LinearDrag:
    """Linear velocity drag at a link origin (rolling resistance etc.)."""
    link: str
    coefficients: tuple                 # (cx, cy, cz) N*s/m, world axes
    character: int = 0


@dataclass
class World:
    ground: GroundModel = field(default_factory=GroundModel)
    mats: list = field(default_factory=list)
    boxes: list = field(default_factory=list)
    springboard: Springboard | None = None
    springs: list = field(default_factory=list)
    gears: list = field(default_factory=list)
    drags: list = field(default_factory=list)

    @classmethod
    def flat_ground(cls, **ground_kwargs):
        return cls(ground=GroundModel(**ground_kwargs))


@dataclass
class ContactPoint:
    link: str
    local_position: np.ndarray
    kind: str
    penetration: float
    slip_velocity: float


# ------------------------------------------------------------ compilation

class _Character:
    """Index bookkeeping for one articulated tree inside a simulation."""

    def __init__(self, body: ArticulatedBody, base_body, base_q, base_v, base_act):
        self.body = body
        self.base_body = base_body
        self.free_root = body.free_root
        self.link_body = {}             # link name -> expanded body index
        self.joint_dof_body = {}        # per-DOF name -> expanded body index
        self.n_act = body.actuated_dof_count
        self.base_act = base_act
        self.base_q = base_q
        self.base_v = base_v
        self.root_q = base_q if body.free_root else None
        self.root_v = base_v if body.free_root else None
        self.dof_names = body.dof_names()
        self.act_q_index = np.zeros(self.n_act, dtype=np.int64)
        self.act_v_index = np.zeros(self.n_act, dtype=np.int64)
        self.torque_limit = np.zeros(self.n_act)


class Simulation:
    """Fixed-step articulated dynamics for one or more characters.

    Single-threaded: step() is not reentrant.  Distinct instances share
    nothing and may run in parallel processes.
    """

    def __init__(self, bodies, world: World | None = None, dt: float = 5e-4,
                 gravity: float = GRAVITY, joint_damping: float = 0.0):
        if not 0 < dt <= 1e-2:
            raise ValueError("dt must lie in (0, 1e-2] s")
        if isinstance(bodies, ArticulatedBody):
            bodies = [bodies]
        self.bodies = list(bodies)
        self.world = world if world is not None else World()
        self.dt = float(dt)
        self.gravity = float(gravity)
        self.characters: list[_Character] = []
        self._compile(joint_damping)
        self._alloc_workspace()
        self.time = 0.0
        self._steps = 0
        self._last_good = self.y.copy()
        self._kin_time = -1.0

    # -- model ------------------------------------------------------------

    def _compile(self, joint_damping):
        parent, jtype, axis, anchor = [], [], [], []
        qidx, vidx = [], []
        mass, com, inertia = [], [], []
        limlo, limhi, limcap, jdamp = [], [], [], []
        nq = nv = 0
        n_act_total = 0
        for body in self.bodies:
            base_body = len(parent)
            ch = _Character(body, base_body, nq, nv, n_act_total)
            link_props = {l.name: l for l in body.links}
            root = body.links[0]
            if body.free_root:
                parent.append(-1)
                jtype.append(kernels.JT_FREE)
                axis.append((0.0, 0.0, 1.0))
                anchor.append((0.0, 0.0, 0.0))
                qidx.append(nq)
                vidx.append(nv)
                mass.append(root.mass)
                com.append(root.com)
                inertia.append(root.inertia)
                limlo.append(-np.inf)
                limhi.append(np.inf)
                limcap.append(0.0)
                jdamp.append(0.0)
                ch.link_body[root.name] = base_body
                nq += 7
                nv += 6
            else:
                # fixed base: root link is the stationary world frame
                ch.link_body[root.name] = -1
            act = 0
            for j in body.joints:
                pidx = ch.link_body[j.parent]
                for k, u in enumerate(j.axes):
                    last = k == len(j.axes) - 1
                    parent.append(pidx)
                    jtype.append(kernels.JT_REVOLUTE)
                    axis.append(np.asarray(u, float))
                    anchor.append(np.asarray(j.anchor, float) if k == 0
                                  else np.zeros(3))
                    qidx.append(nq)
                    vidx.append(nv)
                    link = link_props[j.child]
                    if last:
                        mass.append(link.mass)
                        com.append(link.com)
                        inertia.append(link.inertia)
                        ch.link_body[j.child] = len(parent) - 1
                    else:
                        mass.append(0.0)
                        com.append(np.zeros(3))
                        inertia.append(np.zeros((3, 3)))
                    lo, hi = j.limits[k]
                    limlo.append(lo)
                    limhi.append(hi)
                    limcap.append(j.torque_limit)
                    jdamp.append(joint_damping)
                    name = ch.dof_names[act]
                    ch.joint_dof_body[name] = len(parent) - 1
                    ch.act_q_index[act] = nq
                    ch.act_v_index[act] = nv
                    ch.torque_limit[act] = j.torque_limit
                    pidx = len(parent) - 1
                    nq += 1
                    nv += 1
                    act += 1
            assert act == ch.n_act
            n_act_total += act
            self.characters.append(ch)

        self.nb = len(parent)
        self.nq = nq
        self.nv = nv
        self.n_act = n_act_total
        self._parent = np.asarray(parent, dtype=np.int64)
        self._jtype = np.asarray(jtype, dtype=np.int64)
        self._axis = np.asarray(axis, dtype=np.float64)
        self._anchor = np.asarray(anchor, dtype=np.float64)
        self._qidx = np.asarray(qidx, dtype=np.int64)
        self._vidx = np.asarray(vidx, dtype=np.int64)
        self._limlo = np.asarray(limlo, dtype=np.float64)
        self._limhi = np.asarray(limhi, dtype=np.float64)
        self._limcap = np.asarray(limcap, dtype=np.float64)
        self._jdamp = np.asarray(jdamp, dtype=np.float64)
        self._lim_par = np.array([0.5, 0.04])
        self._mass = np.asarray(mass, dtype=np.float64)
        self._com = np.asarray(com, dtype=np.float64)
        self._Isp = np.zeros((self.nb, 6, 6))
        for i in range(self.nb):
            m = self._mass[i]
            c = self._com[i]
            cx = np.array([[0, -c[2], c[1]], [c[2], 0, -c[0]], [-c[1], c[0], 0.0]])
            Ic = np.asarray(inertia[i], float)
            self._Isp[i, :3, :3] = Ic + m * (cx @ cx.T)
            self._Isp[i, :3, 3:] = m * cx
            self._Isp[i, 3:, :3] = m * cx.T
            self._Isp[i, 3:, 3:] = m * np.eye(3)

        self._act_q = np.concatenate([c.act_q_index for c in self.characters])
        self._act_v = np.concatenate([c.act_v_index for c in self.characters])
        self._torque_limit = np.concatenate([c.torque_limit for c in self.characters])
        self._compile_environment()

    def _lookup_body(self, char_idx, link_name):
        ch = self.characters[char_idx]
        if link_name not in ch.link_body:
            raise KeyError(f"character {char_idx} has no link {link_name!r}")
        b = ch.link_body[link_name]
        if b < 0:
            raise ValueError(f"link {link_name!r} is a fixed base")
        return b

    def _compile_environment(self):
        w = self.world
        sites, wheels = [], []
        self._site_meta = []
        for ci, ch in enumerate(self.characters):
            for s in ch.body.contact_sites:
                sites.append((self._lookup_body(ci, s.link),
                              np.asarray(s.local, float), s.damping_scale))
                self._site_meta.append((ci, s))
            for ws in ch.body.wheel_sites:
                wheels.append((self._lookup_body(ci, ws.link),
                               np.asarray(ws.center, float),
                               np.asarray(ws.axis, float), ws.radius))
        ns, nw = len(sites), len(wheels)
        self._site_body = np.array([s[0] for s in sites], dtype=np.int64).reshape(ns)
        self._site_local = (np.array([s[1] for s in sites])
                            if ns else np.zeros((0, 3)))
        self._site_dscale = np.array([s[2] for s in sites], dtype=np.float64)
        self._anch = np.full((ns, 4), -1.0)
        self._wheel_body = np.array([x[0] for x in wheels], dtype=np.int64).reshape(nw)
        self._wheel_center = (np.array([x[1] for x in wheels])
                              if nw else np.zeros((0, 3)))
        self._wheel_axis = (np.array([x[2] for x in wheels])
                            if nw else np.zeros((0, 3)))
        self._wheel_radius = np.array([x[3] for x in wheels], dtype=np.float64)

        g = w.ground
        self._ground_par = np.array([g.normal_stiffness, g.normal_damping,
                                     g.friction_coefficient, g.stiffness_scale,
                                     g.slip_regularization])
        self._mats = (np.array([[m.x_range[0], m.x_range[1], m.y_range[0],
                                 m.y_range[1], m.stiffness_scale, m.top_z]
                                for m in w.mats])
                      if w.mats else np.zeros((0, 6)))
        rows = []
        for b in w.boxes:
            lo, hi = b.bounds
            rows.append([lo[0], hi[0], lo[1], hi[1], lo[2], hi[2],
                         b.stiffness_scale])
        self._boxes = np.array(rows) if rows else np.zeros((0, 7))
        sb = w.springboard
        if sb is not None:
            self._sb_par = np.array([1.0, sb.x_range[0], sb.x_range[1],
                                     sb.y_range[0], sb.y_range[1], sb.top_z,
                                     sb.stiffness, sb.damping, sb.moving_mass])
            self.naux = 2
        else:
            self._sb_par = np.zeros(9)
            self.naux = 0

        self._spring_names = {}
        sbod, spts, skd, sact = [], [], [], []
        for i, sp in enumerate(w.springs):
            a = self._lookup_body(sp.character_a, sp.link_a)
            if sp.link_b is None:
                b = -1
            else:
                b = self._lookup_body(sp.character_b, sp.link_b)
            sbod.append((a, b))
            spts.append((np.asarray(sp.point_a, float),
                         np.asarray(sp.point_b, float)))
            skd.append((sp.stiffness, sp.damping))
            sact.append(1.0 if sp.active else 0.0)
            self._spring_names[sp.name] = i
        nsp = len(sbod)
        self._spr_body = (np.array(sbod, dtype=np.int64)
                          if nsp else np.zeros((0, 2), dtype=np.int64))
        self._spr_pts = np.array(spts) if nsp else np.zeros((0, 2, 3))
        self._spr_kd = np.array(skd) if nsp else np.zeros((0, 2))
        self._spr_active = np.array(sact) if nsp else np.zeros(0)

        gbod, gpar = [], []
        for gc in w.gears:
            ch = self.characters[gc.character]
            for jn in (gc.joint_a, gc.joint_b):
                if jn not in ch.joint_dof_body:
                    raise KeyError(f"gear references unknown 1-DOF joint {jn!r}")
            gbod.append((ch.joint_dof_body[gc.joint_a],
                         ch.joint_dof_body[gc.joint_b]))
            gpar.append((gc.ratio, gc.stiffness, gc.damping))
        ngr = len(gbod)
        self._gear_body = (np.array(gbod, dtype=np.int64)
                           if ngr else np.zeros((0, 2), dtype=np.int64))
        self._gear_par = np.array(gpar) if ngr else np.zeros((0, 3))

        dbod, dcoef = [], []
        for dr in w.drags:
            dbod.append(self._lookup_body(dr.character, dr.link))
            dcoef.append(np.asarray(dr.coefficients, float))
        nd = len(dbod)
        self._drag_body = (np.array(dbod, dtype=np.int64)
                           if nd else np.zeros(0, dtype=np.int64))
        self._drag_coef = np.array(dcoef) if nd else np.zeros((0, 3))

    def _alloc_workspace(self):
        nb, nq, nv = self.nb, self.nq, self.nv
        self.y = np.zeros(nq + nv + self.naux)
        for ch in self.characters:
            if ch.free_root:
                self.y[ch.root_q + 3] = 1.0     # identity quaternion
        self._tau_full = np.zeros(nv)
        self._R = np.zeros((nb, 3, 3))
        self._o = np.zeros((nb, 3))
        self._E_up = np.zeros((nb, 3, 3))
        self._vsp = np.zeros((nb, 6))
        self._f_ext = np.zeros((nb, 6))
        self._IA = np.zeros((nb, 6, 6))
        self._pA = np.zeros((nb, 6))
        self._Uw = np.zeros((nb, 6))
        self._dval = np.zeros(nb)
        self._ubias = np.zeros(nb)
        self._cbias = np.zeros((nb, 6))
        self._ahat = np.zeros((nb, 6))
        nrep = len(self._site_body) + len(self._wheel_body)
        self._report = np.zeros((max(nrep, 1), 6))
        n = len(self.y)
        self._k1 = np.zeros(n)
        self._k2 = np.zeros(n)
        self._k3 = np.zeros(n)
        self._k4 = np.zeros(n)
        self._ytmp = np.zeros(n)
        self._ynew = np.zeros(n)

    def _model_args(self):
        return (self._parent, self._jtype, self._axis, self._anchor,
                self._qidx, self._vidx, self._Isp, self._limlo, self._limhi,
                self._limcap, self._lim_par, self._jdamp, self.gravity,
                self._site_body, self._site_local, self._site_dscale,
                self._anch,
                self._wheel_body, self._wheel_center, self._wheel_axis,
                self._wheel_radius, self._ground_par, self._mats, self._boxes,
                self._sb_par, self._spr_body, self._spr_pts, self._spr_kd,
                self._spr_active, self._gear_body, self._gear_par,
                self._drag_body, self._drag_coef,
                self._R, self._o, self._E_up, self._vsp, self._f_ext,
                self._IA, self._pA, self._Uw, self._dval, self._ubias,
                self._cbias, self._ahat, self._report)

    # -- state access -----------------------------------------------------

    def state(self, char: int = 0) -> GeneralizedState:
        ch = self.characters[char]
        q = self.y[0:self.nq]
        v = self.y[self.nq:self.nq + self.nv]
        ang = q[ch.act_q_index].copy()
        rate = v[ch.act_v_index].copy()
        if ch.free_root:
            pos = q[ch.root_q:ch.root_q + 3].copy()
            quat = q[ch.root_q + 3:ch.root_q + 7].copy()
            R = quat_to_mat(quat)
            wb = v[ch.root_v:ch.root_v + 3]
            vb = v[ch.root_v + 3:ch.root_v + 6]
            return GeneralizedState(pos, quat, ang, R @ vb, R @ wb, rate,
                                    self.time)
        return GeneralizedState(np.zeros(3), np.array([1.0, 0, 0, 0]), ang,
                                np.zeros(3), np.zeros(3), rate, self.time)

    def set_state(self, st: GeneralizedState, char: int = 0):
        ch = self.characters[char]
        st.validate(ch.n_act)
        q = self.y[0:self.nq]
        v = self.y[self.nq:self.nq + self.nv]
        q[ch.act_q_index] = st.joint_angles
        v[ch.act_v_index] = st.joint_rates
        if ch.free_root:
            q[ch.root_q:ch.root_q + 3] = st.root_position
            quat = quat_normalize(np.asarray(st.root_orientation, float))
            q[ch.root_q + 3:ch.root_q + 7] = quat
            R = quat_to_mat(quat)
            v[ch.root_v:ch.root_v + 3] = R.T @ st.root_angular_vel
            v[ch.root_v + 3:ch.root_v + 6] = R.T @ st.root_linear_vel
        self.time = st.time
        self._kin_time = -1.0
        self._anch[:, 0] = -1.0
        self._last_good = self.y.copy()

    def set_root_pose(self, char, position, quaternion):
        ch = self.characters[char]
        q = self.y[0:self.nq]
        q[ch.root_q:ch.root_q + 3] = position
        q[ch.root_q + 3:ch.root_q + 7] = quat_normalize(np.asarray(quaternion, float))
        self._kin_time = -1.0
        self._anch[:, 0] = -1.0

    def set_root_velocity(self, char, linear_world, angular_world=(0, 0, 0)):
        ch = self.characters[char]
        q = self.y[0:self.nq]
        v = self.y[self.nq:self.nq + self.nv]
        R = quat_to_mat(q[ch.root_q + 3:ch.root_q + 7])
        v[ch.root_v:ch.root_v + 3] = R.T @ np.asarray(angular_world, float)
        v[ch.root_v + 3:ch.root_v + 6] = R.T @ np.asarray(linear_world, float)
        self._kin_time = -1.0

    def joint_index(self, dof_name, char: int = 0):
        return self.characters[char].dof_names.index(dof_name)

    def q_act(self, char: int = 0):
        return self.y[0:self.nq][self.characters[char].act_q_index]

    def v_act(self, char: int = 0):
        return self.y[self.nq:self.nq + self.nv][self.characters[char].act_v_index]

    def set_joint_angles(self, char, mapping, rates=False):
        ch = self.characters[char]
        arr = self.y[self.nq:self.nq + self.nv] if rates else self.y[0:self.nq]
        idx = ch.act_v_index if rates else ch.act_q_index
        for name, val in mapping.items():
            arr[idx[ch.dof_names.index(name)]] = val
        self._kin_time = -1.0
        if not rates:
            self._anch[:, 0] = -1.0

    @property
    def aux(self):
        return self.y[self.nq + self.nv:]

    def set_spring_active(self, name, active):
        self._spr_active[self._spring_names[name]] = 1.0 if active else 0.0

    def set_joint_damping(self, char, dof_name, value):
        b = self.characters[char].joint_dof_body[dof_name]
        self._jdamp[b] = value

    # -- stepping ----------------------------------------------------------

    def step(self, torques=None):
        """Advance one fixed step; torques is the concatenated actuated
        vector (clamped per DOF), None for passive dynamics."""
        self._tau_full[:] = 0.0
        if torques is not None:
            tau = np.clip(np.asarray(torques, float),
                          -self._torque_limit, self._torque_limit)
            if not np.all(np.isfinite(tau)):
                raise SimulationError("non-finite torque command",
                                      self.state_dump())
            self._tau_full[self._act_v] = tau
        if not np.all(np.isfinite(self.y)):
            raise SimulationError(
                f"state non-finite entering step at t={self.time:.4f}s",
                self.state_dump())
        try:
            kernels.rk4_step(self.y, self._tau_full, self.dt, self.nq, self.nv,
                             *self._model_args(),
                             self._k1, self._k2, self._k3, self._k4,
                             self._ytmp, self._ynew)
        except np.linalg.LinAlgError as exc:
            raise SimulationError(
                f"dynamics solve failed at t={self.time:.4f}s: {exc}",
                self.state_dump()) from exc
        if not np.all(np.isfinite(self._ynew)):
            raise SimulationError(
                f"state went non-finite at t={self.time:.4f}s",
                self.state_dump())
        self.y[:] = self._ynew
        kernels.update_anchors(self.y[0:self.nq],
                               self.y[self.nq:self.nq + self.nv],
                               self.y[self.nq + self.nv:],
                               self._parent, self._jtype, self._axis,
                               self._anchor, self._qidx, self._vidx,
                               self._site_body, self._site_local,
                               self._site_dscale, self._ground_par,
                               self._mats, self._boxes, self._sb_par,
                               self._R, self._o, self._E_up, self._vsp,
                               self._anch)
        self.time += self.dt
        self._steps += 1
        self._kin_time = -1.0
        if self._steps % 64 == 0:
            self._last_good = self.y.copy()
        return self.time

    def state_dump(self):
        return {"time": self.time, "y": self._last_good.copy(),
                "anchors": self._anch.copy()}

    # -- kinematics & probes ------------------------------------------------

    def _refresh_kinematics(self):
        if self._kin_time == self.time:
            return
        q = self.y[0:self.nq]
        v = self.y[self.nq:self.nq + self.nv]
        kernels.fk_pass(q, v, self._parent, self._jtype, self._axis,
                        self._anchor, self._qidx, self._vidx,
                        self._R, self._o, self._E_up, self._vsp)
        self._kin_time = self.time

    def link_pose(self, link, char: int = 0):
        self._refresh_kinematics()
        b = self._lookup_body(char, link)
        return self._R[b].copy(), self._o[b].copy()

    def link_velocity(self, link, char: int = 0):
        """World angular velocity and world velocity of the link origin."""
        self._refresh_kinematics()
        b = self._lookup_body(char, link)
        R = self._R[b]
        return R @ self._vsp[b, 0:3], R @ self._vsp[b, 3:6]

    def point_position(self, link, local, char: int = 0):
        R, o = self.link_pose(link, char)
        return o + R @ np.asarray(local, float)

    def point_velocity(self, link, local, char: int = 0):
        self._refresh_kinematics()
        b = self._lookup_body(char, link)
        local = np.asarray(local, float)
        vb = self._vsp[b, 3:6] + np.cross(self._vsp[b, 0:3], local)
        return self._R[b] @ vb

    def _char_bodies(self, char):
        ch = self.characters[char]
        return [b for b in ch.link_body.values() if b >= 0]

    def center_of_mass(self, char: int = 0):
        """(position, velocity) of the character's whole-body com, world."""
        self._refresh_kinematics()
        pos = np.zeros(3)
        vel = np.zeros(3)
        total = 0.0
        for b in self._char_bodies(char):
            m = self._mass[b]
            if m == 0.0:
                continue
            c = self._com[b]
            pos += m * (self._o[b] + self._R[b] @ c)
            vb = self._vsp[b, 3:6] + np.cross(self._vsp[b, 0:3], c)
            vel += m * (self._R[b] @ vb)
            total += m
        return pos / total, vel / total

    def angular_momentum_about_com(self, char: int = 0):
        self._refresh_kinematics()
        com, com_vel = self.center_of_mass(char)
        L = np.zeros(3)
        for b in self._char_bodies(char):
            m = self._mass[b]
            if m == 0.0:
                continue
            R = self._R[b]
            c = self._com[b]
            # spin term: body inertia about its own com, rotated to world
            cx = np.array([[0, -c[2], c[1]], [c[2], 0, -c[0]],
                           [-c[1], c[0], 0.0]])
            Ic = self._Isp[b, :3, :3] - m * (cx @ cx.T)
            w_body = self._vsp[b, 0:3]
            L += R @ (Ic @ w_body)
            r = self._o[b] + R @ c - com
            vb = self._vsp[b, 3:6] + np.cross(w_body, c)
            vrel = R @ vb - com_vel
            L += m * np.cross(r, vrel)
        return L

    def linear_momentum(self, char: int = 0):
        self._refresh_kinematics()
        p = np.zeros(3)
        for b in self._char_bodies(char):
            m = self._mass[b]
            if m == 0.0:
                continue
            vb = self._vsp[b, 3:6] + np.cross(self._vsp[b, 0:3], self._com[b])
            p += m * (self._R[b] @ vb)
        return p

    def kinetic_energy(self, char: int = 0):
        self._refresh_kinematics()
        e = 0.0
        for b in self._char_bodies(char):
            v = self._vsp[b]
            e += 0.5 * v @ (self._Isp[b] @ v)
        return e

    def potential_energy(self, char: int = 0):
        self._refresh_kinematics()
        e = 0.0
        for b in self._char_bodies(char):
            m = self._mass[b]
            if m == 0.0:
                continue
            z = (self._o[b] + self._R[b] @ self._com[b])[2]
            e += m * self.gravity * z
        return e

    def total_energy(self, char: int = 0):
        return self.kinetic_energy(char) + self.potential_energy(char)

    def contact_report(self):
        """Evaluate contact at the current state: list of (ContactPoint,
        world force, character index)."""
        self._refresh_kinematics()
        q = self.y[0:self.nq]
        v = self.y[self.nq:self.nq + self.nv]
        self._f_ext[:] = 0.0
        kernels.contact_pass(q, v, self.aux, self._R, self._o, self._vsp,
                             self._f_ext, self._site_body, self._site_local,
                             self._site_dscale, self._anch, self._wheel_body,
                             self._wheel_center, self._wheel_axis,
                             self._wheel_radius, self._ground_par, self._mats,
                             self._boxes, self._sb_par, self._report)
        out = []
        ns = len(self._site_body)
        for s in range(ns):
            row = self._report[s]
            if row[5] < 0.5:
                continue
            ci, site = self._site_meta[s]
            out.append((ContactPoint(site.link, np.asarray(site.local, float),
                                     site.kind, row[3], row[4]),
                        row[0:3].copy(), ci))
        for w in range(len(self._wheel_body)):
            row = self._report[ns + w]
            if row[5] < 0.5:
                continue
            # wheel sites belong to whichever character owns the body
            b = self._wheel_body[w]
            ci = self._char_of_body(b)
            ws = None
            for site in self.characters[ci].body.wheel_sites:
                if self._lookup_body(ci, site.link) == b:
                    ws = site
            out.append((ContactPoint(ws.link, np.asarray(ws.center, float),
                                     "wheel", row[3], row[4]),
                        row[0:3].copy(), ci))
        return out

    def _char_of_body(self, b):
        for ci, ch in enumerate(self.characters):
            if b in ch.link_body.values():
                return ci
        raise KeyError(b)


# ----------------------------------------------------- spec-level wrappers

_sim_cache: dict = {}


def _cached_sim(body, dt=5e-4):
    key = (id(body), dt)
    sim = _sim_cache.get(key)
    if sim is None or sim.bodies[0] is not body:
        sim = Simulation(body, World(ground=GroundModel()), dt=dt)
        # bare dynamics: no contact unless the body declares sites
        _sim_cache[key] = sim
    return sim


def forward_dynamics(body: ArticulatedBody, state: GeneralizedState,
                     torques, external_forces=()):
    """Generalized accelerations for one body under the given torques.

    Returns the internal layout: for a free root the first six entries are
    [angular acc (body frame); linear acc of the root origin (body frame,
    true acceleration components)], then one entry per actuated DOF.
    external_forces: iterable of (link, local_point, world_force).
    """
    sim = Simulation(body, World(), dt=1e-3)
    sim.set_state(state)
    sim._refresh_kinematics()
    sim._tau_full[:] = 0.0
    if torques is not None:
        tau = np.clip(np.asarray(torques, float), -sim._torque_limit,
                      sim._torque_limit)
        sim._tau_full[sim._act_v] = tau
    sim._f_ext[:] = 0.0
    for (link, point, force) in external_forces:
        b = sim._lookup_body(0, link)
        P = sim.point_position(link, point)
        kernels._apply_world_force(b, np.asarray(P, float),
                                   np.asarray(force, float), sim._R, sim._o,
                                   sim._f_ext)
    q = sim.y[0:sim.nq]
    v = sim.y[sim.nq:sim.nq + sim.nv]
    tau_eff = sim._tau_full.copy()
    kernels.aux_forces(q, v, tau_eff, sim._qidx, sim._vidx, sim._jtype,
                       sim._gear_body, sim._gear_par, sim._drag_body,
                       sim._drag_coef, sim._limlo, sim._limhi, sim._limcap,
                       sim._lim_par, sim._jdamp, sim._R, sim._o, sim._vsp,
                       sim._f_ext, sim.nb)
    qdd = np.zeros(sim.nv)
    kernels.aba_pass(q, v, tau_eff, sim._f_ext, sim._parent, sim._jtype,
                     sim._axis, sim._anchor, sim._qidx, sim._vidx, sim._Isp,
                     sim._R, sim._o, sim._E_up, sim._vsp, sim.gravity, qdd,
                     sim._IA, sim._pA, sim._Uw, sim._dval, sim._ubias,
                     sim._cbias, sim._ahat)
    return qdd


def ground_contact_forces(body: ArticulatedBody, state: GeneralizedState,
                          sites=None, ground: GroundModel | None = None):
    """Contact evaluation on flat ground; returns [(ContactPoint, force)]."""
    b = body if sites is None else replace_sites(body, sites)
    sim = Simulation(b, World(ground=ground or GroundModel()), dt=1e-3)
    sim.set_state(state)
    return [(cp, f) for cp, f, _ in sim.contact_report()]


def replace_sites(body: ArticulatedBody, sites):
    return ArticulatedBody(body.name, body.links, body.joints,
                           contact_sites=list(sites),
                           wheel_sites=body.wheel_sites,
                           free_root=body.free_root)


def step(body: ArticulatedBody, state: GeneralizedState, torque_provider,
         dt: float):
    """One integration step from an explicit state; returns the new state."""
    sim = _cached_sim(body, dt)
    sim.set_state(state)
    tau = torque_provider(state) if callable(torque_provider) else torque_provider
    sim.step(tau)
    return sim.state()


def center_of_mass(body: ArticulatedBody, state: GeneralizedState):
    sim = _cached_sim(body)
    sim.set_state(state)
    return sim.center_of_mass()


def angular_momentum_about_com(body: ArticulatedBody, state: GeneralizedState):
    sim = _cached_sim(body)
    sim.set_state(state)
    return sim.angular_momentum_about_com()
