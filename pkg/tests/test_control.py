"""Control toolkit: PD law, state machine, leg IK, smoothing."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from athletesim.anthropometry import build_humanoid, load_table
from athletesim.control import (ControlError, IkSolution, LegGeometry,
                                PdGains, SmoothedTarget, StateMachine,
                                Transition, fsm_step, leg_fk, leg_ik,
                                pd_torque, smooth_target)
from athletesim.engine import Simulation, World
from athletesim.geometry import rotation_about_axis


def _fk_oracle(sol: IkSolution, geom: LegGeometry, side="l"):
    """Hip-to-heel vector by composing rotation matrices along the hip
    chain (z yaw omitted), written independently of the IK code."""
    x_axis = np.array([-1.0, 0.0, 0.0]) if side == "r" else np.array([1.0, 0.0, 0.0])
    Rx = rotation_about_axis(x_axis, sol.hip_spread)
    Ry = rotation_about_axis(np.array([0.0, -1.0, 0.0]), sol.hip_swing)
    Rk = rotation_about_axis(np.array([0.0, 1.0, 0.0]), sol.knee)
    hip = Rx @ Ry
    knee_point = hip @ np.array([0.0, 0.0, -geom.thigh_length])
    return knee_point + hip @ Rk @ np.array([0.0, 0.0, -geom.shank_length])


def _random_reachable_targets(rng, geom, n):
    lo = abs(geom.thigh_length - geom.shank_length)
    hi = geom.thigh_length + geom.shank_length
    out = []
    while len(out) < n:
        d = rng.uniform(lo + 1e-3, hi - 1e-3)
        v = rng.normal(size=3)
        v[2] = -abs(v[2]) - 0.3      # keep the heel below the hip
        v *= d / np.linalg.norm(v)
        out.append(v)
    return out


GEOM = LegGeometry(0.40, 0.41, 0.15)


# ------------------------------------------------------------------- PD

def test_pd_zero_error_zero_torque():
    assert pd_torque(0.3, 0.3, -1.2, -1.2, PdGains(50, 5)) == 0.0


def test_pd_proportional_term():
    assert pd_torque(0.1, 0.0, 0.0, 0.0, PdGains(10, 0)) == pytest.approx(1.0)


def test_pd_derivative_term():
    assert pd_torque(0.0, 0.0, -0.5, 0.0, PdGains(0, 2)) == pytest.approx(-1.0)


def test_pd_clamps_to_limit():
    assert pd_torque(1.0, 0.0, 0.0, 0.0, PdGains(1000, 0), torque_limit=40) == 40
    assert pd_torque(-1.0, 0.0, 0.0, 0.0, PdGains(1000, 0), torque_limit=40) == -40


def test_pd_rejects_negative_gains():
    with pytest.raises(ValueError):
        PdGains(-1, 0)


@given(e=st.floats(-2, 2), er=st.floats(-5, 5), c=st.floats(0.1, 3))
def test_pd_linear_and_antisymmetric(e, er, c):
    g = PdGains(37.0, 4.0)
    base = pd_torque(e, 0, er, 0, g)
    assert pd_torque(c * e, 0, c * er, 0, g) == pytest.approx(c * base, abs=1e-9)
    assert pd_torque(0, e, 0, er, g) == pytest.approx(-base, abs=1e-9)


# -------------------------------------------------------- state machine

def _runner_like_machine():
    return StateMachine(
        states=("flight", "loading", "stance"),
        transitions=(
            Transition("flight", lambda c: c.get("heel_down", False), "loading"),
            Transition("loading", lambda c: c["t"] > 0.02, "stance"),
            Transition("stance", lambda c: c.get("lift_off", False), "flight"),
        ),
        initial="flight")


def test_fsm_idle_accumulates_time():
    m = _runner_like_machine()
    m2, fired = fsm_step(m, {"t": 0.0}, 0.01)
    assert m2 is m and fired is None
    assert m.active == "flight"
    assert m.time_in_state == pytest.approx(0.01)


def test_fsm_heel_touchdown_enters_loading():
    m = _runner_like_machine()
    _, fired = fsm_step(m, {"heel_down": True, "t": 0.0}, 0.01)
    assert fired == "flight->loading"
    assert m.active == "loading"
    assert m.time_in_state == 0.0


def test_fsm_first_declared_transition_wins():
    m = StateMachine(
        states=("a", "b", "c"),
        transitions=(Transition("a", lambda c: True, "b"),
                     Transition("a", lambda c: True, "c")),
        initial="a")
    m.step(None, 0.01)
    assert m.active == "b"


def test_fsm_only_active_state_predicates_run():
    calls = []

    def spy(name):
        def pred(c):
            calls.append(name)
            return False
        return pred

    m = StateMachine(states=("a", "b"),
                     transitions=(Transition("a", spy("a"), "b"),
                                  Transition("b", spy("b"), "a")),
                     initial="a")
    m.step(None, 0.01)
    assert calls == ["a"]


def test_fsm_predicate_error_becomes_control_error():
    m = StateMachine(states=("a", "b"),
                     transitions=(Transition("a", lambda c: c["missing"], "b"),),
                     initial="a")
    with pytest.raises(ControlError, match="a"):
        m.step({}, 0.01)


def test_fsm_rejects_bad_wiring():
    with pytest.raises(ValueError):
        StateMachine(("a",), (Transition("a", bool, "zz"),), "a")
    with pytest.raises(ValueError):
        StateMachine(("a", "b"), (), "nope")


@given(st.lists(st.booleans(), min_size=1, max_size=40))
def test_fsm_always_exactly_one_valid_state(outcomes):
    flags = iter(outcomes)
    m = StateMachine(
        states=("a", "b"),
        transitions=(Transition("a", lambda c: next(flags), "b"),
                     Transition("b", lambda c: next(flags), "a")),
        initial="a")
    for _ in range(len(outcomes)):
        try:
            m.step(None, 0.005)
        except ControlError:
            break               # iterator exhausted inside a predicate
        assert m.active in m.states


# --------------------------------------------------------------- leg IK

def test_ik_straight_down_fully_extended():
    sol = leg_ik((0.0, 0.0, -(GEOM.thigh_length + GEOM.shank_length)), GEOM)
    assert sol.hip_swing == pytest.approx(0.0, abs=1e-12)
    assert sol.hip_spread == pytest.approx(0.0, abs=1e-12)
    assert sol.knee == pytest.approx(0.0, abs=1e-6)
    assert not sol.clamped


def test_ik_right_angle_knee():
    geom = LegGeometry(0.45, 0.45, 0.15)
    sol = leg_ik((0.0, 0.0, -0.45 * math.sqrt(2.0)), geom)
    assert sol.knee == pytest.approx(math.pi / 2, abs=1e-9)


def test_ik_round_trip_random_targets():
    rng = np.random.default_rng(42)
    for t in _random_reachable_targets(rng, GEOM, 1000):
        sol = leg_ik(t, GEOM)
        assert not sol.clamped
        assert sol.knee >= 0.0
        err = np.linalg.norm(_fk_oracle(sol, GEOM) - t)
        assert err < 1e-6, (t, sol)


def test_ik_round_trip_right_side():
    rng = np.random.default_rng(7)
    for t in _random_reachable_targets(rng, GEOM, 200):
        sol = leg_ik(t, GEOM, side="r")
        err = np.linalg.norm(_fk_oracle(sol, GEOM, side="r") - t)
        assert err < 1e-6


def test_ik_internal_fk_agrees_with_oracle():
    rng = np.random.default_rng(3)
    for t in _random_reachable_targets(rng, GEOM, 50):
        sol = leg_ik(t, GEOM)
        assert np.linalg.norm(leg_fk(sol, GEOM) - _fk_oracle(sol, GEOM)) < 1e-12


def test_ik_unreachable_far_target_clamps_to_rim():
    t = np.array([0.4, 0.1, -1.2])
    sol = leg_ik(t, GEOM)
    assert sol.clamped
    p = _fk_oracle(sol, GEOM)
    assert np.linalg.norm(p) == pytest.approx(
        GEOM.thigh_length + GEOM.shank_length, abs=1e-9)
    # direction preserved
    assert np.dot(p, t) / (np.linalg.norm(p) * np.linalg.norm(t)) == \
        pytest.approx(1.0, abs=1e-9)


def test_ik_angles_place_the_real_models_ankle():
    """Drive the gymnast's hip/knee DOFs with IK output and check the
    ankle lands on the requested point, measured through the engine."""
    table = load_table()
    lm = table["landmarks"]
    body = build_humanoid("gymnast")
    H = 1.64
    geom = LegGeometry(lm["knee_length"] * H, lm["shank_length"] * H,
                       (lm["foot_length"] - lm["heel_back"]) * H)
    sim = Simulation([body], World.flat_ground())
    rng = np.random.default_rng(11)
    for side, sgn in (("l", 1.0), ("r", -1.0)):
        hip_local = np.array([0.0, sgn * lm["hip_half_spacing"] * H, 0.0])
        for t in _random_reachable_targets(rng, geom, 8):
            t[1] *= sgn
            sol = leg_ik(t, geom, side=side)
            sim.set_joint_angles(0, {
                f"hip_{side}_z": 0.0,
                f"hip_{side}_x": sol.hip_spread,
                f"hip_{side}_y": sol.hip_swing,
                f"knee_{side}": sol.knee})
            ankle = sim.point_position(f"shank_{side}",
                                       (0.0, 0.0, -geom.shank_length))
            hip = sim.point_position("pelvis", hip_local)
            assert np.linalg.norm((ankle - hip) - t) < 1e-6


@given(st.floats(-0.6, 0.6), st.floats(-0.4, 0.4), st.floats(-1.3, -0.15))
def test_ik_knee_never_hyperextends(tx, ty, tz):
    sol = leg_ik((tx, ty, tz), GEOM)
    assert 0.0 <= sol.knee <= math.pi


def test_ik_rejects_bad_geometry_and_side():
    with pytest.raises(ValueError):
        LegGeometry(0.0, 0.4, 0.1)
    with pytest.raises(ValueError):
        leg_ik((0, 0, -0.5), GEOM, side="x")


# ------------------------------------------------------------ smoothing

def test_smooth_endpoints():
    t = SmoothedTarget(0.2, 0.8, 1.0, 0.1)
    assert smooth_target(t, 1.0) == (0.2, 0.0)
    assert smooth_target(t, 1.1) == (0.8, 0.0)
    assert smooth_target(t, 5.0) == (0.8, 0.0)


def test_smooth_midpoint_symmetry():
    t = SmoothedTarget(-0.4, 0.6, 0.0, 0.2)
    v, r = smooth_target(t, 0.1)
    assert v == pytest.approx(0.1)
    assert r > 0


def test_smooth_rate_is_value_derivative():
    t = SmoothedTarget(0.0, 1.0, 0.0, 0.15)
    h = 1e-7
    for now in (0.03, 0.07, 0.12):
        v0, r = smooth_target(t, now)
        v1, _ = smooth_target(t, now + h)
        assert (v1 - v0) / h == pytest.approx(r, rel=1e-4)


@settings(max_examples=50)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.01, 1.0),
       st.floats(0, 1.5))
def test_smooth_value_stays_in_range(a, b, dur, frac):
    t = SmoothedTarget(a, b, 0.0, dur)
    v, _ = smooth_target(t, frac * dur)
    assert min(a, b) - 1e-12 <= v <= max(a, b) + 1e-12


def test_smooth_rejects_bad_duration():
    with pytest.raises(ValueError):
        SmoothedTarget(0, 1, 0, 0.0)
