"""Control primitives shared by the behavior controllers.

Proportional-derivative servos, a small first-match state machine,
closed-form two-segment leg inverse kinematics and cubic target
smoothing.  Everything here is a pure function of its inputs except
StateMachine, which belongs to exactly one controller.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class ControlError(RuntimeError):
    """A controller could not produce torques for this step."""


# ------------------------------------------------------------------- PD

@dataclass(frozen=True)
class PdGains:
    k: float            # N*m/rad
    kv: float           # N*m*s/rad

    def __post_init__(self):
        if self.k < 0 or self.kv < 0:
            raise ValueError("PD gains must be non-negative")


def pd_torque(desired: float, actual: float, desired_rate: float,
              actual_rate: float, gains: PdGains,
              torque_limit: float = math.inf) -> float:
    """Servo torque k*(angle error) + kv*(rate error), clamped."""
    tau = gains.k * (desired - actual) + gains.kv * (desired_rate - actual_rate)
    if tau > torque_limit:
        return torque_limit
    if tau < -torque_limit:
        return -torque_limit
    return tau


# -------------------------------------------------------- state machine

@dataclass(frozen=True)
class Transition:
    source: str
    predicate: Callable
    target: str
    name: str = ""

    @property
    def label(self) -> str:
        return self.name or f"{self.source}->{self.target}"


class StateMachine:
    """Named states with first-match transition rules.

    Only the active state's transitions are evaluated, in declaration
    order, and at most one fires per step.
    """

    def __init__(self, states: Sequence[str], transitions: Sequence[Transition],
                 initial: str):
        self.states = tuple(states)
        if len(set(self.states)) != len(self.states):
            raise ValueError("duplicate state names")
        for tr in transitions:
            for end in (tr.source, tr.target):
                if end not in self.states:
                    raise ValueError(f"transition references unknown state {end!r}")
        if initial not in self.states:
            raise ValueError(f"initial state {initial!r} not in state set")
        self.transitions = tuple(transitions)
        self.active = initial
        self.time_in_state = 0.0

    def step(self, context, dt: float) -> Optional[str]:
        """Advance one control step; returns the fired event label or None."""
        for tr in self.transitions:
            if tr.source != self.active:
                continue
            try:
                hit = tr.predicate(context)
            except Exception as exc:
                raise ControlError(
                    f"transition {tr.label!r} predicate raised in state "
                    f"{self.active!r} after {self.time_in_state:.4f}s: {exc!r}"
                ) from exc
            if hit:
                self.active = tr.target
                self.time_in_state = 0.0
                return tr.label
        self.time_in_state += dt
        return None


def fsm_step(machine: StateMachine, context, dt: float):
    """Operation form of StateMachine.step: (machine, fired event or None)."""
    return machine, machine.step(context, dt)


# --------------------------------------------------------------- leg IK

@dataclass(frozen=True)
class LegGeometry:
    thigh_length: float
    shank_length: float
    foot_length: float      # heel to ball, used by touchdown placement

    def __post_init__(self):
        if min(self.thigh_length, self.shank_length, self.foot_length) <= 0:
            raise ValueError("leg segment lengths must be positive")


@dataclass(frozen=True)
class IkSolution:
    hip_spread: float       # about the hip x axis (lateral)
    hip_swing: float        # about the hip -y axis (positive = forward)
    knee: float             # positive = flexion
    clamped: bool           # target was unreachable and got projected


def leg_ik(target, geometry: LegGeometry, side: str = "l") -> IkSolution:
    """Hip and knee angles placing the shank endpoint at `target`.

    `target` is the hip-to-heel vector in the pelvis frame (x forward,
    y left, z up).  Hip yaw is taken as zero; the solution uses the
    spread (x axis) and swing (-y axis) hip rotations plus the knee.
    Unreachable targets are projected onto the reachable annulus and
    flagged.
    """
    l1 = geometry.thigh_length
    l2 = geometry.shank_length
    tx, ty, tz = float(target[0]), float(target[1]), float(target[2])
    if side == "r":
        ty = -ty
    elif side != "l":
        raise ValueError(f"side must be 'l' or 'r', got {side!r}")

    d = math.sqrt(tx * tx + ty * ty + tz * tz)
    clamped = False
    lo, hi = abs(l1 - l2), l1 + l2
    if d < 1e-9:
        # degenerate: leave the leg hanging straight down at min reach
        return IkSolution(0.0, 0.0, math.pi if lo == 0 else math.acos(
            max(-1.0, min(1.0, (lo * lo - l1 * l1 - l2 * l2) / (2 * l1 * l2)))),
            True)
    if d > hi:
        scale = hi / d
        tx, ty, tz = tx * scale, ty * scale, tz * scale
        d = hi
        clamped = True
    elif d < lo:
        scale = lo / d
        tx, ty, tz = tx * scale, ty * scale, tz * scale
        d = lo
        clamped = True

    c = (d * d - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    c = max(-1.0, min(1.0, c))
    knee = math.acos(c)

    # heel in the thigh frame once the knee is set
    sx = -l2 * math.sin(knee)
    sz = -(l1 + l2 * math.cos(knee))

    # lateral spread folds (ty, tz) into the sagittal plane
    b = -math.sqrt(ty * ty + tz * tz)
    spread = math.atan2(ty, -tz)

    # rotate (sx, sz) onto (tx, b) about the -y axis
    swing = math.atan2(sx * b - sz * tx, sx * tx + sz * b)
    return IkSolution(spread, swing, knee, clamped)


def leg_fk(solution: IkSolution, geometry: LegGeometry,
           side: str = "l") -> np.ndarray:
    """Hip-to-heel vector produced by an IK solution (two segments)."""
    l1 = geometry.thigh_length
    l2 = geometry.shank_length
    a, s, k = solution.hip_swing, solution.hip_spread, solution.knee
    # knee about +y in the thigh frame
    x = -l2 * math.sin(k)
    z = -(l1 + l2 * math.cos(k))
    # hip swing about -y
    x, z = x * math.cos(a) - z * math.sin(a), x * math.sin(a) + z * math.cos(a)
    # hip spread about x
    y, z = -z * math.sin(s), z * math.cos(s)
    if side == "r":
        y = -y
    return np.array([x, y, z])


# ------------------------------------------------------------ smoothing

@dataclass(frozen=True)
class SmoothedTarget:
    start_value: float
    goal_value: float
    start_time: float
    duration: float

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("smoothing duration must be positive")


def smooth_target(t: SmoothedTarget, now: float):
    """Cubic ease value and rate; endpoints have zero rate."""
    u = (now - t.start_time) / t.duration
    if u <= 0.0:
        return t.start_value, 0.0
    if u >= 1.0:
        return t.goal_value, 0.0
    span = t.goal_value - t.start_value
    value = t.start_value + span * u * u * (3.0 - 2.0 * u)
    rate = span * 6.0 * u * (1.0 - u) / t.duration
    return value, rate
