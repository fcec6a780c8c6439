"""Running controller.

A six-state machine (flight, loading, heel contact, heel and toe
contact, toe contact, unloading) selects the control actions per step.
Forward speed is regulated by foot placement at touchdown, the stance
knee acts as a passive spring, the ankle supplies liftoff thrust, body
attitude is servoed through the stance hip, the recovery leg swings
through folded on a half-cycle clock into the next touchdown pose and
the arms counter-swing against the opposite leg.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .anthropometry import load_table
from .control import (LegGeometry, PdGains, StateMachine, Transition,
                      leg_ik, pd_torque)
from .engine import GRAVITY, GeneralizedState, Simulation
from .geometry import euler_zyx, rotation_about_axis, wrap_angle

RUN_STATES = ("flight", "loading", "heelContact", "heelAndToeContact",
              "toeContact", "unloading")


@dataclass
class GaitCommand:
    """Desired planar velocity plus facing; updatable between steps."""
    desired_vx: float
    desired_vy: float
    heading: float = 0.0
    heading_rate: float = 0.0       # rad/s, steady-turn command

    @classmethod
    def from_speed(cls, speed: float, heading: float = 0.0,
                   heading_rate: float = 0.0) -> "GaitCommand":
        return cls(speed * math.cos(heading), speed * math.sin(heading),
                   heading, heading_rate)

    @property
    def speed(self) -> float:
        return math.hypot(self.desired_vx, self.desired_vy)

    def validate(self):
        if not (0.0 <= self.speed <= 6.0):
            raise ValueError(f"commanded speed {self.speed:.2f} m/s outside [0, 6]")


@dataclass(frozen=True)
class ArmSynergy:
    coupling_gain: float = 1.0      # shoulder fore/aft per opposite hip rad
    offset: float = -0.15           # rad, resting shoulder angle
    spread_amplitude: float = 0.08  # shoulder x oscillation
    spread_offset: float = 0.10
    elbow_amplitude: float = 0.25
    elbow_offset: float = 1.25

    def __post_init__(self):
        for a in (self.spread_amplitude, self.elbow_amplitude):
            if not 0 <= a <= math.pi / 2:
                raise ValueError("arm oscillation amplitude outside [0, pi/2]")


@dataclass
class RunnerParams:
    """Hand-tuned gain table for the running controller."""
    speed_gain: float = 0.10            # s, Eq 1 correction gain k
    initial_trim: float = -0.08         # m, starting placement trim
    touchdown_leg_fraction: float = 0.96
    toe_fraction_lo: float = 0.78      # of t_s at 2.5 m/s
    toe_fraction_hi: float = 0.66      # of t_s at 5.0 m/s
    loading_duration: float = 0.02
    unloading_duration: float = 0.02
    stance_time_base: float = 0.295     # s, nominal contact at v = 0
    stance_time_slope: float = 0.021    # s lost per m/s of speed
    flight_time_nominal: float = 0.13
    gsm_amplitude: float = 0.22         # rad, ground-speed-matching overshoot
    swing_time_fraction: float = 0.75   # of expected flight for the swing ease
    touchdown_ankle: float = -0.28      # dorsiflexed so the heel strikes first
    clearance_ankle: float = -0.38
    pushoff_ankle: float = 0.42
    clearance_knee: float = 1.30
    swing_knee_lift: float = 0.0       # mid-swing tuck on top of the ik pose
    redirect_damping: float = 500.0     # N*s/m pull toward the bounce profile
    plant_lead: float = 0.080           # seconds before touchdown to commit
    capture_gain: float = 0.15          # m of extra step per rad of pitch
    capture_rate_gain: float = 0.08     # m per rad/s of pitch rate
    min_hip_spread: float = 0.035       # keeps the passing legs apart
    desired_pitch: float = 0.0
    fall_height: float = 0.50
    hip_swing: PdGains = field(default_factory=lambda: PdGains(420.0, 26.0))
    hip_spread: PdGains = field(default_factory=lambda: PdGains(300.0, 20.0))
    hip_yaw: PdGains = field(default_factory=lambda: PdGains(60.0, 6.0))
    knee_flight: PdGains = field(default_factory=lambda: PdGains(300.0, 13.0))
    knee_stance: PdGains = field(default_factory=lambda: PdGains(520.0, 8.0))
    ankle_flight: PdGains = field(default_factory=lambda: PdGains(90.0, 3.5))
    ankle_settle: PdGains = field(default_factory=lambda: PdGains(12.0, 1.2))
    ankle_mid: PdGains = field(default_factory=lambda: PdGains(130.0, 6.0))
    ankle_stance: PdGains = field(default_factory=lambda: PdGains(320.0, 3.0))
    ball: PdGains = field(default_factory=lambda: PdGains(24.0, 0.8))
    att_pitch: PdGains = field(default_factory=lambda: PdGains(560.0, 200.0))
    att_roll: PdGains = field(default_factory=lambda: PdGains(220.0, 26.0))
    att_yaw: PdGains = field(default_factory=lambda: PdGains(70.0, 8.0))
    waist: PdGains = field(default_factory=lambda: PdGains(480.0, 48.0))
    neck: PdGains = field(default_factory=lambda: PdGains(20.0, 2.0))
    shoulder: PdGains = field(default_factory=lambda: PdGains(64.0, 4.0))
    elbow: PdGains = field(default_factory=lambda: PdGains(18.0, 1.2))
    wrist: PdGains = field(default_factory=lambda: PdGains(5.0, 0.4))
    arms: ArmSynergy = field(default_factory=ArmSynergy)


@dataclass
class RunnerState:
    """Controller memory between steps."""
    machine: StateMachine
    active_leg: str = "l"
    stance_estimate: float = 0.25       # t_s
    flight_estimate: float = 0.13
    toe_transition_fraction: float = 0.4
    speed_gain: float = 0.08
    touchdown_fraction: float = 0.97
    heel_offset: tuple = (0.083, 0.070)     # heel->ankle, heading frame
    placement_trim: float = 0.0         # m along heading, adapts per stride
    last_liftoff: Optional[tuple] = None    # (t, x, y) of the previous one
    liftoff_active: tuple = (0.0, 0.0)  # (hip x, hip y) of the leg now active
    liftoff_idle: tuple = (0.0, 0.0)
    stance_timer: float = 0.0
    touchdown_knee: float = 0.2
    touchdown_hip: tuple = (0.035, 0.45)
    load_fraction: float = 0.0
    plant_point: Optional[np.ndarray] = None
    swing_start: Dict[str, float] = field(default_factory=dict)
    idle_swing: Dict[str, float] = field(default_factory=dict)
    prev_desired: Dict[str, float] = field(default_factory=dict)
    prev_rates: Dict[str, float] = field(default_factory=dict)
    events: List[str] = field(default_factory=list)
    fallen: bool = False

    @property
    def idle_leg(self) -> str:
        return "r" if self.active_leg == "l" else "l"


# ------------------------------------------------------------ equations

def touchdown_target(state: GeneralizedState, cmd: GaitCommand,
                     rs: RunnerState, geometry: LegGeometry,
                     velocity=None, lean: float = 0.0):
    """Hip-to-heel displacement for the coming touchdown (world frame).

    Horizontal placement is the stance neutral point, corrected for the
    hop from heel to ball during stance and for speed error; the
    vertical part keeps the touchdown leg length fixed.  `velocity`
    overrides the body speed estimate (the root link wobbles as the
    limbs swing; the whole-body com is steadier).  `lean` shifts the
    spot along the heading: a body pitching forward needs the next
    support ahead of the center of mass to get a righting moment.
    """
    if velocity is None:
        velocity = state.root_linear_vel
    vx, vy = velocity[0], velocity[1]
    th = cmd.heading
    k = rs.speed_gain
    x_hh = 0.5 * (rs.stance_estimate * vx - math.cos(th) * geometry.foot_length) \
        + k * (vx - cmd.desired_vx) + (rs.placement_trim + lean) * math.cos(th)
    y_hh = 0.5 * (rs.stance_estimate * vy - math.sin(th) * geometry.foot_length) \
        + k * (vy - cmd.desired_vy) + (rs.placement_trim + lean) * math.sin(th)
    # fixed leg length applied hip->ankle so it pins the touchdown knee
    hb, drop = rs.heel_offset
    leg = _touchdown_length(geometry, rs.touchdown_fraction)
    ax = x_hh + hb * math.cos(th)
    ay = y_hh + hb * math.sin(th)
    planar = math.hypot(ax, ay)
    if planar > 0.9 * leg:
        scale = 0.9 * leg / planar
        ax *= scale
        ay *= scale
        x_hh = ax - hb * math.cos(th)
        y_hh = ay - hb * math.sin(th)
    z_hh = -math.sqrt(leg * leg - ax * ax - ay * ay) - drop
    return np.array([x_hh, y_hh, z_hh])


def _touchdown_length(geometry: LegGeometry,
                      fraction: float = 0.96) -> float:
    return fraction * (geometry.thigh_length + geometry.shank_length)


def ground_speed_match(rs: RunnerState, flight_phase: float,
                       amplitude: float = 0.22) -> float:
    """Extra fore/aft hip swing during flight.

    Peaks mid-flight and returns to zero into touchdown, so the hip is
    retracting (and the heel slowing relative to the ground) when the
    foot lands.  Past the expected touchdown the sweep keeps going at
    the same rate for a while in case the flight runs long.
    """
    p = max(flight_phase, 0.0)
    if p <= 1.0:
        return amplitude * math.sin(math.pi * p)
    return -amplitude * math.pi * min(p - 1.0, 0.10)


def idle_leg_targets(rs: RunnerState, beta_xd: float, beta_yd: float,
                     min_spread: float = 0.035):
    """Mirror the active hip about the liftoff pose (then keep the legs
    from crossing)."""
    ax_lo, ay_lo = rs.liftoff_idle
    bx_lo, by_lo = rs.liftoff_active
    alpha_xd = ax_lo - (beta_xd - bx_lo)
    alpha_yd = ay_lo - (beta_yd - by_lo)
    return max(alpha_xd, min_spread), alpha_yd


def arm_targets(synergy: ArmSynergy, opposite_hip_y: float,
                phase: float = 0.0):
    """Shoulder (z, x, y) and elbow desired angles from the opposite hip."""
    gamma_y = synergy.coupling_gain * opposite_hip_y + synergy.offset
    swing = opposite_hip_y
    shoulder_x = synergy.spread_offset + synergy.spread_amplitude * swing
    elbow = synergy.elbow_offset + synergy.elbow_amplitude * swing
    return {"z": 0.0, "x": shoulder_x, "y": gamma_y}, elbow


def desired_roll(speed: float, heading_rate: float) -> float:
    """Lean into a steady turn: centripetal balance atan(v*w/g)."""
    return -math.atan2(speed * heading_rate, GRAVITY)


def stance_attitude_torques(attitude, rates, cmd: GaitCommand,
                            params: RunnerParams, axes_world):
    """Torques for the stance-hip DOFs that push body roll/pitch/yaw
    toward their targets.

    attitude/rates: (roll, pitch, yaw) of the pelvis and their rates in
    the heading frame; axes_world maps each stance-hip DOF name to its
    world axis.  The joint reaction on the pelvis is minus the applied
    axis torque, hence the sign flip.
    """
    roll, pitch, yaw = attitude
    roll_rate, pitch_rate, yaw_rate = rates
    want = np.zeros(3)
    want[0] = -(params.att_roll.k * (roll - desired_roll(cmd.speed, cmd.heading_rate))
                + params.att_roll.kv * roll_rate)
    want[1] = -(params.att_pitch.k * (pitch - params.desired_pitch)
                + params.att_pitch.kv * pitch_rate)
    want[2] = -(params.att_yaw.k * wrap_angle(yaw - cmd.heading)
                + params.att_yaw.kv * (yaw_rate - cmd.heading_rate))
    out = {}
    for dof, axis in axes_world.items():
        out[dof] = -float(np.dot(axis, want))
    return out


# ------------------------------------------------------------ controller

class RunnerController:
    """Owns one runner character inside a Simulation."""

    def __init__(self, sim: Simulation, cmd: GaitCommand,
                 params: Optional[RunnerParams] = None, char: int = 0):
        cmd.validate()
        self.sim = sim
        self.cmd = cmd
        self.params = params or RunnerParams()
        self.char = char
        ch = sim.characters[char]
        self.dof = {name: i for i, name in enumerate(ch.dof_names)}
        self.torque_limit = ch.torque_limit
        self.n_act = len(ch.dof_names)
        lm = load_table()["landmarks"]
        anchors = {j.name: np.asarray(j.anchor) for j in sim.bodies[char].joints}
        # nominal stature back-solved from the thigh, so every landmark
        # fraction below scales consistently with the built model
        H = abs(anchors["knee_l"][2]) / lm["knee_length"]
        self.height = H
        self.geometry = LegGeometry(
            lm["knee_length"] * H, lm["shank_length"] * H,
            (lm["heel_back"] + lm["ball_forward"]) * H)
        self.hip_half = lm["hip_half_spacing"] * H
        self.heel_local = np.array([-lm["heel_back"] * H, 0.0,
                                    -lm["ankle_height"] * H])
        self.ankle_drop = lm["ankle_height"] * H
        self.heel_back = lm["heel_back"] * H
        self._sites = {(s.link, s.kind): np.asarray(s.local, float)
                       for s in sim.bodies[char].contact_sites}
        self.body_weight = GRAVITY * sum(
            sim._mass[b] for b in sim._char_bodies(char))
        p = self.params
        # the cycle is entrained to a commanded cadence: measured stance
        # and flight times refine the estimates only within a band, so a
        # couple of clipped strides cannot talk the gait into a collapsed
        # rhythm (a shrinking stance estimate raises the force the next
        # stance asks for, which shortens it further)
        self._nominal_stance = float(np.clip(
            p.stance_time_base - p.stance_time_slope * cmd.speed,
            0.16, 0.30))
        self._nominal_flight = p.flight_time_nominal
        self.rs = RunnerState(
            machine=self._build_machine(),
            stance_estimate=self._nominal_stance,
            flight_estimate=self._nominal_flight,
            speed_gain=p.speed_gain,
            touchdown_fraction=p.touchdown_leg_fraction,
            heel_offset=(self.heel_back, self.ankle_drop),
            placement_trim=p.initial_trim)
        self._set_toe_fraction()

    # -- state machine ----------------------------------------------------

    def _build_machine(self) -> StateMachine:
        p = self.params
        return StateMachine(
            states=RUN_STATES,
            transitions=(
                Transition("flight",
                           lambda c: c._heel_down() or c._ball_down(),
                           "loading", "touchdown"),
                Transition("loading",
                           lambda c: c.rs.machine.time_in_state >= p.loading_duration,
                           "heelContact", "planted"),
                Transition("heelContact", lambda c: c._ball_down(),
                           "heelAndToeContact", "ballContact"),
                Transition("heelAndToeContact",
                           lambda c: c.rs.stance_timer >=
                           c.rs.toe_transition_fraction * c.rs.stance_estimate
                           or (c.rs.load_fraction < 0.35 and
                               c.rs.stance_timer >= 0.4 * c.rs.stance_estimate),
                           "toeContact", "heelOff"),
                Transition("toeContact",
                           lambda c: (c._foot_free() and c.rs.stance_timer
                                      >= 0.6 * c.rs.stance_estimate) or
                           (c.rs.load_fraction < 0.25 and c.rs.stance_timer
                            >= 0.5 * c.rs.stance_estimate) or
                           c.rs.stance_timer >= 1.0 * c.rs.stance_estimate,
                           "unloading", "liftoff"),
                Transition("unloading",
                           lambda c: c.rs.machine.time_in_state >= p.unloading_duration,
                           "flight", "airborne"),
            ),
            initial="flight")

    def _site_z(self, link: str, local) -> float:
        return float(self.sim.point_position(link, local, self.char)[2])

    def _heel_down(self) -> bool:
        leg = self.rs.active_leg
        foot = f"foot_{leg}"
        return self._site_z(foot, self._sites[(foot, "heel")]) <= 0.0

    def _ball_down(self) -> bool:
        leg = self.rs.active_leg
        toes = f"toes_{leg}"
        return self._site_z(toes, self._sites[(toes, "ball")]) <= 0.0

    def _foot_free(self) -> bool:
        leg = self.rs.active_leg
        toes = f"toes_{leg}"
        ball_z = self._site_z(toes, self._sites[(toes, "ball")])
        toe_z = self._site_z(toes, self._sites[(toes, "toe")])
        return min(ball_z, toe_z) > 0.002

    # -- per-step control ---------------------------------------------------

    def control(self) -> np.ndarray:
        """Torque vector for the current simulation state."""
        rs, p, sim = self.rs, self.params, self.sim
        st = sim.state(self.char)
        if st.root_position[2] < p.fall_height and not rs.fallen:
            rs.fallen = True
            rs.events.append("fall")

        was = rs.machine.active
        dwell = rs.machine.time_in_state
        fired = rs.machine.step(self, sim.dt)
        if fired:
            rs.events.append(fired)
            self._on_transition(was, rs.machine.active, st, dwell)
        if rs.machine.active not in ("flight", "unloading"):
            rs.stance_timer += sim.dt

        tau = np.zeros(self.n_act)
        q = sim.q_act(self.char)
        v = sim.v_act(self.char)
        desired: Dict[str, tuple] = {}
        self._ff: Dict[str, float] = {}

        self._posture_targets(desired)
        self._arm_targets_step(q, desired)
        if rs.machine.active in ("flight", "unloading"):
            self._flight_targets(st, q, desired)
        else:
            self._stance_targets(st, q, desired)
        self._idle_targets(q, desired)

        gains = self._gain_map()
        for name, (angle, rate) in desired.items():
            i = self.dof[name]
            g = gains[name]
            tau[i] = pd_torque(angle, q[i], rate, v[i], g,
                               self.torque_limit[i])
        if rs.machine.active not in ("flight", "unloading") \
                and getattr(self, "_knee_one_way", False):
            i = self.dof[f"knee_{rs.active_leg}"]
            tau[i] = min(tau[i], 0.0)
        for name, extra in self._ff.items():
            i = self.dof[name]
            tau[i] = float(np.clip(tau[i] + extra, -self.torque_limit[i],
                                   self.torque_limit[i]))
        if rs.machine.active not in ("flight", "unloading"):
            # attitude authority fades in with actual foot load: hammering
            # the hip of a barely loaded leg windmills it off the ground
            w_load = self._foot_load_fraction()
            att = self._attitude_torques(st)
            for name, t in att.items():
                i = self.dof[name]
                t = float(np.clip(t, -self.torque_limit[i],
                                  self.torque_limit[i]))
                tau[i] = (1.0 - w_load) * tau[i] + w_load * t
        rs.prev_desired = {k: a for k, (a, _) in desired.items()}
        self._last_desired = desired
        return tau

    def step(self):
        """One control step followed by one simulation step."""
        tau = self.control()
        self.sim.step(self._full_tau(tau))
        return self.rs.events

    def _full_tau(self, tau):
        if len(self.sim.characters) == 1:
            return tau
        full = np.zeros(self.sim._act_v.shape[0])
        ch = self.sim.characters[self.char]
        base = 0
        for ci, c in enumerate(self.sim.characters):
            n = len(c.dof_names)
            if ci == self.char:
                full[base:base + n] = tau
            base += n
        return full

    # -- transition bookkeeping ---------------------------------------------

    def _on_transition(self, src: str, dst: str, st: GeneralizedState,
                       dwell: float):
        rs = self.rs
        q = self.sim.q_act(self.char)
        if dst == "loading":
            rs.stance_timer = 0.0
            rs.plant_point = None
            rs.load_fraction = 0.0
            if dwell > 0.04:        # ignore the instant launch touchdown
                rs.flight_estimate = float(np.clip(
                    0.7 * rs.flight_estimate + 0.3 * dwell,
                    0.75 * self._nominal_flight, 1.3 * self._nominal_flight))
            # spring about the landing pose, but never hold a deep crouch:
            # a tucked landing has to rebound into a support-worthy leg
            rs.touchdown_knee = min(q[self.dof[f"knee_{rs.active_leg}"]], 0.7)
            rs.touchdown_hip = (q[self.dof[f"hip_{rs.active_leg}_x"]],
                                q[self.dof[f"hip_{rs.active_leg}_y"]])
        if dst == "unloading":
            # liftoff: measure stance, swap roles, snapshot both hips
            rs.plant_point = None
            measured = min(max(rs.stance_timer, 0.12), 0.45)
            rs.stance_estimate = float(np.clip(
                0.6 * rs.stance_estimate + 0.4 * measured,
                0.85 * self._nominal_stance, 1.15 * self._nominal_stance))
            self._set_toe_fraction()
            self._update_trim(st)
            old_active, old_idle = rs.active_leg, rs.idle_leg
            rs.active_leg = old_idle
            act, idl = rs.active_leg, old_active
            rs.liftoff_active = (q[self.dof[f"hip_{act}_x"]],
                                 q[self.dof[f"hip_{act}_y"]])
            rs.liftoff_idle = (q[self.dof[f"hip_{idl}_x"]],
                               q[self.dof[f"hip_{idl}_y"]])
            rs.swing_start = {
                "hip_x": q[self.dof[f"hip_{act}_x"]],
                "hip_y": q[self.dof[f"hip_{act}_y"]],
                "knee": q[self.dof[f"knee_{act}"]],
                "t": self.sim.time}
            self._start_idle_swing(idl, st)

    def _start_idle_swing(self, leg: str, st: GeneralizedState):
        """The leg that just finished stance starts its recovery swing.

        It has one opposite stance plus one flight to travel from full
        extension behind the body to the next touchdown pose out front,
        so it swings on its own clock rather than mirroring the stance
        hip: the stance hip extends mostly in late stance, and a mirror
        of it starts the recovery far too late to arrive.  The endpoint
        is the touchdown pose predicted from the liftoff velocity; the
        flight-phase placement refines it before landing.
        """
        rs = self.rs
        q = self.sim.q_act(self.char)
        _, com_v = self.sim.center_of_mass(self.char)
        target = touchdown_target(st, self.cmd, rs, self.geometry,
                                  velocity=com_v)
        th = self.cmd.heading
        ankle_rel = target + np.array(
            [self.heel_back * math.cos(th), self.heel_back * math.sin(th),
             self.ankle_drop])
        sol = leg_ik(rotation_about_axis((0.0, 0.0, 1.0), th).T @ ankle_rel,
                     self.geometry, side=leg)
        rs.idle_swing = {
            "hip_x": q[self.dof[f"hip_{leg}_x"]],
            "hip_y": q[self.dof[f"hip_{leg}_y"]],
            "end_x": sol.hip_spread, "end_y": sol.hip_swing,
            "t": self.sim.time}

    def _set_toe_fraction(self):
        p = self.params
        s = min(max(self.cmd.speed, 2.5), 5.0)
        u = (s - 2.5) / 2.5
        self.rs.toe_transition_fraction = \
            p.toe_fraction_lo + (p.toe_fraction_hi - p.toe_fraction_lo) * u

    def _update_trim(self, st):
        """Per-stride placement correction: nulls the steady speed error
        that any fixed neutral-point model leaves behind."""
        rs = self.rs
        now = (self.sim.time, st.root_position[0], st.root_position[1])
        if rs.last_liftoff is not None:
            t0, x0, y0 = rs.last_liftoff
            span = now[0] - t0
            if 0.1 < span < 1.5:
                hx = math.cos(self.cmd.heading)
                hy = math.sin(self.cmd.heading)
                v_avg = ((now[1] - x0) * hx + (now[2] - y0) * hy) / span
                err = v_avg - (self.cmd.desired_vx * hx
                               + self.cmd.desired_vy * hy)
                rs.placement_trim = float(
                    np.clip(rs.placement_trim + 0.08 * err, -0.18, 0.18))
        rs.last_liftoff = now

    # -- target assembly ------------------------------------------------------

    def _posture_targets(self, desired):
        p = self.params
        Rp, _ = self.sim.link_pose("pelvis", self.char)
        _, pitch, roll = euler_zyx(Rp)
        # keep the trunk upright in the world even when the pelvis rocks
        lean = float(np.clip(p.desired_pitch - pitch, -0.3, 0.3))
        desired["waist_z"] = (0.0, 0.0)
        desired["waist_x"] = (float(np.clip(-roll, -0.25, 0.25)), 0.0)
        desired["waist_y"] = (lean, 0.0)
        desired["neck_z"] = (0.0, 0.0)
        desired["neck_x"] = (0.0, 0.0)
        desired["neck_y"] = (-0.05, 0.0)

    def _arm_targets_step(self, q, desired):
        arms = self.params.arms
        for side, opp in (("l", "r"), ("r", "l")):
            hip_y = q[self.dof[f"hip_{opp}_y"]]
            shoulder, elbow = arm_targets(arms, hip_y)
            for ax in ("z", "x", "y"):
                desired[f"shoulder_{side}_{ax}"] = (shoulder[ax], 0.0)
            desired[f"elbow_{side}"] = (elbow, 0.0)
            desired[f"wrist_{side}_y"] = (0.0, 0.0)
            desired[f"wrist_{side}_x"] = (0.0, 0.0)

    def _flight_targets(self, st, q, desired):
        rs, p = self.rs, self.params
        leg = rs.active_leg
        com_p, com_v = self.sim.center_of_mass(self.char)
        th = self.cmd.heading
        Rp, op = self.sim.link_pose("pelvis", self.char)
        yaw, pitch, roll = euler_zyx(Rp)
        # capture correction keys off the heavy trunk, not the rocking
        # pelvis: step further ahead of a body that is tipping forward
        Rt, _ = self.sim.link_pose("torso", self.char)
        _, trunk_pitch, _ = euler_zyx(Rt)
        wt, _ = self.sim.link_velocity("torso", self.char)
        pitch_rate = -math.sin(th) * float(wt[0]) + math.cos(th) * float(wt[1])
        lean = p.capture_gain * (trunk_pitch - p.desired_pitch) \
            + p.capture_rate_gain * pitch_rate
        lean = float(np.clip(lean, -0.10, 0.22))
        target_world = touchdown_target(st, self.cmd, rs, self.geometry,
                                        velocity=com_v, lean=lean)

        sw = rs.swing_start
        since = (self.sim.time - sw["t"]) if sw else rs.machine.time_in_state
        airtime = rs.flight_estimate + p.unloading_duration
        # remaining fall of the swing foot down to the ground, taken at
        # the contact points' own vertical speed: late in flight they
        # drop faster than the body as the leg unfolds, and a clock run
        # on the slower body speed commits the landing too late.  this
        # only triggers the commitment: the swing clock itself runs on
        # the adaptive per-stride estimate, because a clock fed back
        # from the foot stalls (the tuck holds it high, which stretches
        # the prediction, which prolongs the tuck)
        t_rem = None
        for link, kind in ((f"foot_{leg}", "heel"), (f"toes_{leg}", "ball")):
            local = self._sites[(link, kind)]
            z_h = max(self._site_z(link, local), 0.0)
            wf, vf = self.sim.link_velocity(link, self.char)
            Rf, _ = self.sim.link_pose(link, self.char)
            vz_h = float(vf[2] + np.cross(wf, Rf @ local)[2])
            t = (vz_h + math.sqrt(vz_h * vz_h + 2.0 * GRAVITY * z_h)) \
                / GRAVITY
            t_rem = t if t_rem is None else min(t_rem, t)
        phase = since / max(airtime, 1e-3)
        gsm = ground_speed_match(rs, phase, p.gsm_amplitude)

        # late in flight, commit to a landing spot fixed in the world.  a
        # hip-relative target rides forward with the body, so the heel
        # would strike still carrying most of the run speed; chasing a
        # fixed spot instead makes the foot decelerate onto it and the
        # ground reaction spike at contact stays small.  the trigger is
        # the predicted time to impact, which stays meaningful when a
        # weak pushoff cuts the flight far below its running estimate
        side = 1.0 if leg == "l" else -1.0
        hip_world = op + Rp @ np.array([0.0, side * self.hip_half, 0.0])
        # the placement is balanced about the center of mass, not the
        # hip: when the trunk leans, the mass moves out ahead of the
        # pelvis and a hip-anchored step loses exactly the support
        # margin the lean needs
        com_off = np.array([com_p[0] - hip_world[0],
                            com_p[1] - hip_world[1], 0.0])
        committed = rs.plant_point is not None
        if t_rem is not None and (committed or t_rem <= p.plant_lead):
            if not committed:
                # cast the spot from where the body will be at impact,
                # not from where it is now
                ahead = np.array([com_v[0] * t_rem, com_v[1] * t_rem, 0.0])
                spot = hip_world + com_off + ahead + target_world
                rs.plant_point = np.array([spot[0], spot[1], 0.0])
                committed = True
            heel_rel = rs.plant_point - hip_world
            gsm = 0.0
        else:
            heel_rel = target_world + com_off
        # heel target -> ankle target (heel trails behind and below)
        ankle_rel = heel_rel + np.array(
            [self.heel_back * math.cos(th), self.heel_back * math.sin(th),
             self.ankle_drop])
        # bound the tilt compensation: a large forward pitch would other-
        # wise demand a larger swing whose reaction pitches further
        pitch = float(np.clip(pitch, -0.45, 0.45))
        roll = float(np.clip(roll, -0.35, 0.35))
        R_used = (rotation_about_axis((0.0, 0.0, 1.0), yaw)
                  @ rotation_about_axis((0.0, 1.0, 0.0), pitch)
                  @ rotation_about_axis((1.0, 0.0, 0.0), roll))
        t_pelvis = R_used.T @ ankle_rel
        if committed:
            # landing leg length is the controlled quantity: a body that
            # sank low during flight would otherwise get a deeply bent
            # landing pose from the raw spot geometry, and a bent leg has
            # neither the reach nor the spring geometry to take the hit.
            # keep the spot's direction, force the touchdown length
            reach = p.touchdown_leg_fraction * (
                self.geometry.thigh_length + self.geometry.shank_length)
            norm = float(np.linalg.norm(t_pelvis))
            if norm > 1e-6:
                t_pelvis = t_pelvis * (reach / norm)
        sol = leg_ik(t_pelvis, self.geometry, side=leg)
        self._dbg = (since, airtime, phase, gsm, sol.hip_swing,
                     target_world[0], float(pitch))
        goal = {"hip_x": sol.hip_spread, "hip_y": sol.hip_swing + gsm,
                "knee": sol.knee}
        if sw:
            u = min(since /
                    max(p.swing_time_fraction * airtime, 1e-3), 1.0)
            ease = u * u * (3.0 - 2.0 * u)
            for key in ("hip_x", "hip_y", "knee"):
                goal[key] = sw[key] + (goal[key] - sw[key]) * ease
        # no extra tuck here: this leg already swung through under the
        # body as the idle leg, folded for clearance.  its flight is the
        # tail of the swing, where the foot is out front and the only job
        # is a steady unfold into the landing pose.  a knee wave on top
        # would eat the short flight and strike the ground half bent
        bump = math.sin(math.pi * min(max(phase / 0.5, 0.0), 1.0))
        if committed:
            bump = 0.0
        goal["knee"] += p.swing_knee_lift * bump
        prev = rs.prev_desired
        for key, name in (("hip_x", f"hip_{leg}_x"), ("hip_y", f"hip_{leg}_y"),
                          ("knee", f"knee_{leg}")):
            rate = 0.0
            if name in prev:
                rate = (goal[key] - prev[name]) / self.sim.dt
                rate = float(np.clip(rate, -30.0, 30.0))
                # low-pass: a finite difference at the control rate turns
                # any target kink into a damping-term hammer.  while the
                # plant chases its fixed spot the rate must track fast,
                # or the foot strikes still carrying its swing speed
                a = 0.5 if committed else 0.25
                rate = a * rate + (1.0 - a) * rs.prev_rates.get(name, 0.0)
            rs.prev_rates[name] = rate
            desired[name] = (goal[key], rate)
        ankle = p.touchdown_ankle + \
            (p.clearance_ankle - p.touchdown_ankle) * bump
        # toe-up guard: while the knee still lags the straight landing
        # pose the shank leans back, so dorsiflex extra to clear the toe
        lag = max(float(q[self.dof[f"knee_{leg}"]]) - sol.knee, 0.0)
        ankle = max(ankle - 0.6 * lag, -0.58)
        desired[f"hip_{leg}_z"] = (0.0, 0.0)
        desired[f"ankle_{leg}"] = (ankle, 0.0)
        desired[f"ball_{leg}"] = (0.0, 0.0)

    def _stance_targets(self, st, q, desired):
        rs, p = self.rs, self.params
        leg = rs.active_leg
        state = rs.machine.active
        kq = float(q[self.dof[f"knee_{leg}"]])
        lt, ls = self.geometry.thigh_length, self.geometry.shank_length
        chord = math.sqrt(lt * lt + ls * ls + 2.0 * lt * ls * math.cos(kq))
        arm = lt * ls * math.sin(kq) / max(chord, 1e-6)
        # the stance knee tracks a ground-force profile instead of a
        # joint-angle spring.  the descent at touchdown hardly flexes the
        # knee (the settling foot eats it), so a position spring never
        # stores the energy it would need to give back, and the force it
        # does produce peaks at the wrong time.  commanded force: body
        # weight plus the half-sine whose impulse absorbs the nominal
        # touchdown and buys the nominal flight.  the damping term pulls
        # the actual vertical rate onto the bounce the profile implies,
        # so a soft touchdown is not over-launched and a crashing one
        # gets caught harder, without double-counting the redirect
        T = max(rs.stance_estimate, 1e-3)
        amp = math.pi * self.body_weight * self._nominal_flight / (2.0 * T)
        # a body already pitched past its lean target must not thrust:
        # late-stance push acts behind the mass and feeds the rotation,
        # so the stride turns into a catch step that brakes instead.
        # support (the weight term) never fades, only the hop energy
        Rt, _ = self.sim.link_pose("torso", self.char)
        _, tp, _ = euler_zyx(Rt)
        gate = 1.0 - (tp - p.desired_pitch - 0.05) / 0.15
        gate = 0.3 + 0.7 * min(max(gate, 0.0), 1.0)
        s = math.pi * min(rs.stance_timer / T, 1.0)
        force = self.body_weight + amp * gate * math.sin(s)
        half_hop = 0.5 * GRAVITY * self._nominal_flight
        mass = self.body_weight / GRAVITY
        vz_prof = -half_hop + amp * T / (math.pi * mass) * (1.0 - math.cos(s))
        _, com_v = self.sim.center_of_mass(self.char)
        force += p.redirect_damping * (vz_prof - float(com_v[2]))
        self._ff[f"knee_{leg}"] = -arm * max(force, 0.0) * rs.load_fraction
        # the angle servo is only a one-way stop: it resists collapse
        # past the landing flexion but never pulls against the ground
        # (the leg is a strut, not a hook), except for the flexor guard
        # that keeps a straightening knee off its hyperextension limit
        desired[f"knee_{leg}"] = (rs.touchdown_knee, 0.0)
        self._knee_one_way = kq >= 0.15
        desired[f"hip_{leg}_z"] = (0.0, 0.0)
        if state == "loading":
            # arrest the swing retraction and pin the leg where it landed
            # until the anchor takes weight
            desired[f"hip_{leg}_x"] = (rs.touchdown_hip[0], 0.0)
            desired[f"hip_{leg}_y"] = (rs.touchdown_hip[1], 0.0)
        else:
            # floor under the load-gated attitude blend: damp only, so an
            # unloaded leg stays put and the falling body can re-load it
            qx = q[self.dof[f"hip_{leg}_x"]]
            qy = q[self.dof[f"hip_{leg}_y"]]
            desired[f"hip_{leg}_x"] = (qx, 0.0)
            desired[f"hip_{leg}_y"] = (qy, 0.0)
        if state in ("loading", "heelContact"):
            desired[f"ankle_{leg}"] = (p.touchdown_ankle * 0.5, 0.0)
        elif state == "heelAndToeContact":
            desired[f"ankle_{leg}"] = (0.12, 0.0)
        else:
            # toe-off: a zero rate target would brake the plantarflex it
            # is trying to drive, so ask for a rising rate as well.  the
            # push shrinks with the same gate as the knee thrust
            ank = 0.12 + (p.pushoff_ankle - 0.12) * gate
            desired[f"ankle_{leg}"] = (ank, 8.0 * gate)
        desired[f"ball_{leg}"] = (0.0, 0.0)

    def _idle_targets(self, q, desired):
        rs, p = self.rs, self.params
        leg = rs.idle_leg
        sw = rs.idle_swing
        if sw:
            # half-cycle clock: one opposite stance plus one flight from
            # toe-off out back to the touchdown pose out front.  the hip
            # finishes early (u 0.85) so the flight phase takes over a
            # settled thigh; the knee stays folded the whole way, both
            # for clearance and because unfolding while the other foot
            # still bears injects pitch momentum through the ground
            T = max(rs.stance_estimate + rs.flight_estimate, 1e-3)
            u = min((self.sim.time - sw["t"]) / T, 1.0)
            s = min(u / 0.85, 1.0)
            ease = s * s * (3.0 - 2.0 * s)
            hip_y = sw["hip_y"] + (sw["end_y"] - sw["hip_y"]) * ease
            hip_x = sw["hip_x"] + (sw["end_x"] - sw["hip_x"]) \
                * min(u / 0.4, 1.0)
            hip_x = max(hip_x, p.min_hip_spread)
        else:
            hip_x, hip_y = rs.liftoff_idle
        goal = {f"hip_{leg}_x": hip_x, f"hip_{leg}_y": hip_y,
                f"knee_{leg}": p.clearance_knee}
        prev = rs.prev_desired
        for name, angle in goal.items():
            rate = 0.0
            if name in prev:
                # the swing needs its own speed fed forward, or the
                # damping term caps the sweep well below the profile rate
                rate = (angle - prev[name]) / self.sim.dt
                rate = float(np.clip(rate, -30.0, 30.0))
                rate = 0.25 * rate + 0.75 * rs.prev_rates.get(name, 0.0)
            rs.prev_rates[name] = rate
            desired[name] = (angle, rate)
        desired[f"hip_{leg}_z"] = (0.0, 0.0)
        desired[f"ankle_{leg}"] = (p.clearance_ankle, 0.0)
        desired[f"ball_{leg}"] = (0.0, 0.0)

    def _foot_load_fraction(self) -> float:
        """Vertical ground force under the stance foot, low-passed and
        normalized so that half body weight reads as full authority."""
        rs = self.rs
        leg = rs.active_leg
        links = (f"foot_{leg}", f"toes_{leg}")
        fz = 0.0
        for cp, force, ci in self.sim.contact_report():
            if ci == self.char and cp.link in links:
                fz += float(force[2])
        raw = min(fz / (0.5 * self.body_weight), 1.0)
        rs.load_fraction = 0.9 * rs.load_fraction + 0.1 * raw
        return rs.load_fraction

    def _attitude_torques(self, st):
        # right the heavy trunk, not the pelvis: hip reactions rock the
        # light pelvis segment far more than the body actually tips
        leg = self.rs.active_leg
        Rp, _ = self.sim.link_pose("pelvis", self.char)
        Rt, _ = self.sim.link_pose("torso", self.char)
        yaw, pitch, roll = euler_zyx(Rt)
        w_world, _ = self.sim.link_velocity("torso", self.char)
        ch, sh = math.cos(yaw), math.sin(yaw)
        rates = (w_world[0] * ch + w_world[1] * sh,
                 -w_world[0] * sh + w_world[1] * ch,
                 w_world[2])
        # hip DOF axes in the pelvis frame; z sign mirrors on the right
        zsgn = 1.0 if leg == "l" else -1.0
        xsgn = zsgn
        axes = {
            f"hip_{leg}_z": Rp @ np.array([0.0, 0.0, zsgn]),
            f"hip_{leg}_x": Rp @ np.array([xsgn, 0.0, 0.0]),
            f"hip_{leg}_y": Rp @ np.array([0.0, -1.0, 0.0]),
        }
        return stance_attitude_torques(
            (roll, pitch, yaw),
            (rates[0], rates[1], rates[2]),
            self.cmd, self.params, axes)

    def _gain_map(self):
        p = self.params
        g = {}
        state = self.rs.machine.active
        stance = state not in ("flight", "unloading")
        act = self.rs.active_leg
        for side in ("l", "r"):
            active_stance = stance and side == act
            g[f"hip_{side}_z"] = p.hip_yaw
            g[f"hip_{side}_x"] = p.hip_spread
            g[f"hip_{side}_y"] = p.hip_swing
            g[f"knee_{side}"] = p.knee_stance if active_stance else p.knee_flight
            if active_stance:
                # toe drops passively before the ball is planted; the
                # ankle only stiffens for the final push
                g[f"ankle_{side}"] = {
                    "loading": p.ankle_settle, "heelContact": p.ankle_settle,
                    "heelAndToeContact": p.ankle_mid,
                }.get(state, p.ankle_stance)
            else:
                g[f"ankle_{side}"] = p.ankle_flight
            g[f"ball_{side}"] = p.ball
            for ax in ("z", "x", "y"):
                g[f"shoulder_{side}_{ax}"] = p.shoulder
            g[f"elbow_{side}"] = p.elbow
            g[f"wrist_{side}_y"] = p.wrist
            g[f"wrist_{side}_x"] = p.wrist
        for ax in ("z", "x", "y"):
            g[f"waist_{ax}"] = p.waist
            g[f"neck_{ax}"] = p.neck
        return g


# --------------------------------------------------------------- launch

def launch_runner(sim: Simulation, cmd: GaitCommand,
                  params: Optional[RunnerParams] = None,
                  char: int = 0) -> RunnerController:
    """Drop the runner into a shallow flight at the commanded speed with
    the legs pre-posed for the coming touchdown."""
    rc = RunnerController(sim, cmd, params, char)
    rs, p = rc.rs, rc.params
    v = np.array([cmd.desired_vx, cmd.desired_vy, 0.0])
    # descend firmly enough that body weight reaches the anchored heel
    # before the leg can wander off the spot
    sim.set_root_velocity(char, (v[0], v[1], -0.30), (0.0, 0.0, 0.0))
    fake = sim.state(char)
    target = touchdown_target(fake, cmd, rs, rc.geometry)
    # hip height such that the pre-posed heel hangs just off the ground
    sim.set_root_pose(char, (0.0, 0.0, -target[2] + 0.004),
                      _yaw_quat(cmd.heading))
    ankle_rel = target + np.array([rc.heel_back * math.cos(cmd.heading),
                                   rc.heel_back * math.sin(cmd.heading),
                                   rc.ankle_drop])
    sol = leg_ik(ankle_rel, rc.geometry, side="l")
    pose = {
        "hip_l_x": sol.hip_spread, "hip_l_y": sol.hip_swing,
        "knee_l": sol.knee, "ankle_l": p.touchdown_ankle,
        "hip_r_x": p.min_hip_spread, "hip_r_y": -0.05,
        "knee_r": p.clearance_knee, "ankle_r": p.touchdown_ankle,
        "waist_y": 0.05,
    }
    for side, opp_y in (("l", -0.05), ("r", sol.hip_swing)):
        sh, el = arm_targets(p.arms, opp_y)
        pose[f"shoulder_{side}_x"] = sh["x"]
        pose[f"shoulder_{side}_y"] = sh["y"]
        pose[f"elbow_{side}"] = el
    sim.set_joint_angles(char, pose)
    # retract the landing leg so the heel meets the ground near rest; the
    # tucked idle leg counter-swings so the pair injects no net pitch
    # momentum (a one-sided retraction would vault the body over the heel)
    leg_len = rc.geometry.thigh_length + rc.geometry.shank_length
    retract = -0.95 * cmd.speed / leg_len
    sim.set_joint_angles(char, {"hip_l_y": retract,
                                "hip_r_y": -0.55 * retract},
                         rates=True)
    rs.active_leg = "l"
    rs.liftoff_active = (sol.hip_spread, sol.hip_swing)
    rs.liftoff_idle = (p.min_hip_spread, -0.05)
    rs.swing_start = {"hip_x": sol.hip_spread, "hip_y": sol.hip_swing,
                      "knee": sol.knee, "t": sim.time}
    rs.idle_swing = {"hip_x": p.min_hip_spread, "hip_y": -0.05,
                     "end_x": sol.hip_spread, "end_y": sol.hip_swing,
                     "t": sim.time}
    return rc


def _yaw_quat(heading: float):
    return (math.cos(heading / 2), 0.0, 0.0, math.sin(heading / 2))
