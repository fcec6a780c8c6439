"""Dynamics engine checks.

The forward dynamics is verified against an independent Euler-Lagrange
oracle: mass matrix from the kinetic-energy quadratic form with chain-rule
velocities, Coriolis terms and gravity from finite differences of M(q) and
V(q).  The oracle shares no code with the articulated-body implementation
(it re-derives kinematics from joint data directly).
"""

import numpy as np
import pytest

from athletesim.body import ArticulatedBody, JointSpec, RigidLink
from athletesim.engine import (GeneralizedState, GroundModel, Simulation,
                               World, forward_dynamics, ground_contact_forces,
                               step)
from athletesim.body import ContactSite

G = 9.81


# ---------------------------------------------------------------- oracle

def _rot(axis, ang):
    # local Rodrigues, independent of the package's geometry helpers
    u = np.asarray(axis, float)
    u = u / np.linalg.norm(u)
    K = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0.0]])
    return np.eye(3) + np.sin(ang) * K + (1 - np.cos(ang)) * (K @ K)


class LagrangianOracle:
    """Euler-Lagrange acceleration for a fixed-base serial chain."""

    def __init__(self, joints, links):
        # joints: list of (axis, anchor_in_parent); links: (mass, com, inertia)
        self.joints = joints
        self.links = links
        self.n = len(joints)

    def fk(self, q):
        R = np.eye(3)
        p = np.zeros(3)
        frames = []
        for i, (axis, anchor) in enumerate(self.joints):
            p = p + R @ anchor
            R = R @ _rot(axis, q[i])
            frames.append((R, p))
        return frames

    def velocities(self, q, qd):
        frames = self.fk(q)
        axes_w = []
        anchors_w = []
        Rp = np.eye(3)
        pp = np.zeros(3)
        for i, (axis, anchor) in enumerate(self.joints):
            anchors_w.append(pp + Rp @ anchor)
            axes_w.append(Rp @ np.asarray(axis, float) if i == 0
                          else frames[i - 1][0] @ np.asarray(axis, float))
            Rp, pp = frames[i]
        out = []
        for i in range(self.n):
            R, p = frames[i]
            m, com, _ = self.links[i]
            pc = p + R @ com
            w = np.zeros(3)
            v = np.zeros(3)
            for j in range(i + 1):
                aw = axes_w[j]
                w += qd[j] * aw
                v += qd[j] * np.cross(aw, pc - anchors_w[j])
            out.append((w, v))
        return frames, out

    def kinetic(self, q, qd):
        frames, vels = self.velocities(q, qd)
        T = 0.0
        for i in range(self.n):
            R, _ = frames[i]
            m, com, I = self.links[i]
            w, v = vels[i]
            T += 0.5 * m * v @ v + 0.5 * w @ (R @ I @ R.T) @ w
        return T

    def potential(self, q):
        frames = self.fk(q)
        V = 0.0
        for i in range(self.n):
            R, p = frames[i]
            m, com, _ = self.links[i]
            V += m * G * (p + R @ com)[2]
        return V

    def mass_matrix(self, q):
        n = self.n
        M = np.zeros((n, n))
        for i in range(n):
            ei = np.zeros(n)
            ei[i] = 1.0
            M[i, i] = 2.0 * self.kinetic(q, ei)
        for i in range(n):
            for j in range(i + 1, n):
                e = np.zeros(n)
                e[i] = 1.0
                e[j] = 1.0
                M[i, j] = M[j, i] = (self.kinetic(q, e)
                                     - 0.5 * M[i, i] - 0.5 * M[j, j])
        return M

    def qdd(self, q, qd, tau, h=1e-5):
        n = self.n
        M = self.mass_matrix(q)
        dM = np.zeros((n, n, n))
        for k in range(n):
            qp = q.copy()
            qm = q.copy()
            qp[k] += h
            qm[k] -= h
            dM[:, :, k] = (self.mass_matrix(qp) - self.mass_matrix(qm)) / (2 * h)
        # h_i = sum_jk (dM_ij/dq_k - 0.5 dM_jk/dq_i) qd_j qd_k
        bias = np.zeros(n)
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    bias[i] += (dM[i, j, k] - 0.5 * dM[j, k, i]) * qd[j] * qd[k]
        grav = np.zeros(n)
        for k in range(n):
            qp = q.copy()
            qm = q.copy()
            qp[k] += h
            qm[k] -= h
            grav[k] = (self.potential(qp) - self.potential(qm)) / (2 * h)
        return np.linalg.solve(M, tau - bias - grav)


def _random_pd_inertia(rng, scale=0.05):
    a = rng.uniform(0.3, 1.0, size=2) * scale
    c = rng.uniform(abs(a[0] - a[1]) * 1.05 + 1e-4, (a[0] + a[1]) * 0.95)
    moments = np.array([a[0], a[1], c])
    A = rng.normal(size=(3, 3))
    Q, _ = np.linalg.qr(A)
    return Q @ np.diag(moments) @ Q.T


def _random_chain(seed, n_links=3):
    rng = np.random.default_rng(seed)
    links = [RigidLink("base", 0.0, np.zeros(3), np.zeros((3, 3)))]
    joints = []
    oracle_joints = []
    oracle_links = []
    axes_pool = [(0, 0, 1.0), (0, 1.0, 0), (1.0, 0, 0)]
    for i in range(n_links):
        m = rng.uniform(0.5, 4.0)
        com = rng.uniform(-0.2, 0.2, size=3)
        I = _random_pd_inertia(rng)
        name = f"l{i}"
        links.append(RigidLink(name, m, com, I))
        axis = np.asarray(axes_pool[rng.integers(0, 3)], float)
        anchor = rng.uniform(-0.3, 0.3, size=3)
        parent = "base" if i == 0 else f"l{i-1}"
        joints.append(JointSpec(f"j{i}", parent, name, anchor, (tuple(axis),),
                                ((-12.0, 12.0),), torque_limit=500.0))
        oracle_joints.append((axis, anchor))
        oracle_links.append((m, com, I))
    body = ArticulatedBody("chain", links, joints, free_root=False)
    return body, LagrangianOracle(oracle_joints, oracle_links)


def test_three_link_chain_matches_lagrangian_oracle():
    n_states = 100
    worst = 0.0
    for seed in range(5):
        body, oracle = _random_chain(seed)
        rng = np.random.default_rng(1000 + seed)
        for _ in range(n_states // 5):
            q = rng.uniform(-2.0, 2.0, size=3)
            qd = rng.uniform(-3.0, 3.0, size=3)
            tau = rng.uniform(-20.0, 20.0, size=3)
            st = GeneralizedState(np.zeros(3), np.array([1.0, 0, 0, 0]),
                                  q, np.zeros(3), np.zeros(3), qd)
            got = forward_dynamics(body, st, tau)
            want = oracle.qdd(q, qd, tau)
            scale = max(1.0, np.abs(want).max())
            err = np.abs(got - want).max() / scale
            worst = max(worst, err)
    assert worst < 1e-6, f"worst relative error {worst:.2e}"


# ----------------------------------------------------- analytic examples

def _free_body(mass=2.0):
    link = RigidLink("b", mass, np.zeros(3), np.eye(3) * 0.02)
    return ArticulatedBody("free", [link], [])


def test_free_body_gravity_acceleration():
    body = _free_body()
    st = GeneralizedState(np.array([0, 0, 2.0]), np.array([1.0, 0, 0, 0]),
                          np.zeros(0), np.zeros(3), np.zeros(3), np.zeros(0))
    qdd = forward_dynamics(body, st, np.zeros(0))
    np.testing.assert_allclose(qdd[0:3], 0.0, atol=1e-12)       # no spin
    np.testing.assert_allclose(qdd[3:6], [0, 0, -G], atol=1e-12)


def test_pinned_rod_release():
    L, m = 1.2, 3.0
    world = RigidLink("world", 0.0, np.zeros(3), np.zeros((3, 3)))
    rod = RigidLink("rod", m, np.array([L / 2, 0, 0]),
                    np.diag([1e-6, m * L * L / 12, m * L * L / 12]))
    pend = ArticulatedBody("pend", [world, rod],
                           [JointSpec("pivot", "world", "rod", np.zeros(3),
                                      ((0.0, 1.0, 0.0),), ((-10.0, 10.0),))],
                           free_root=False)
    st = GeneralizedState(np.zeros(3), np.array([1.0, 0, 0, 0]), np.zeros(1),
                          np.zeros(3), np.zeros(3), np.zeros(1))
    qdd = forward_dynamics(pend, st, np.zeros(1))
    assert qdd[0] == pytest.approx(3 * G / (2 * L), rel=1e-12)
    return pend


def test_external_force_matches_torque():
    # pushing the rod tip down equals the equivalent joint torque
    pend = test_pinned_rod_release()
    L = 1.2
    st = GeneralizedState(np.zeros(3), np.array([1.0, 0, 0, 0]), np.zeros(1),
                          np.zeros(3), np.zeros(3), np.zeros(1))
    f = forward_dynamics(pend, st, np.zeros(1),
                         external_forces=[("rod", (L, 0, 0), (0, 0, -10.0))])
    t = forward_dynamics(pend, st, np.array([10.0 * L]))
    base = forward_dynamics(pend, st, np.zeros(1))
    assert f[0] - base[0] == pytest.approx(t[0] - base[0], rel=1e-9)


# ------------------------------------------------------------ integrator

def test_ballistic_polynomial_exactness():
    body = _free_body()
    sim = Simulation(body, World(), dt=1e-3)
    sim.set_root_pose(0, (0, 0, 30.0), (1, 0, 0, 0))
    sim.set_root_velocity(0, (3.0, 0, 5.0))
    for _ in range(1000):
        sim.step()
    st = sim.state()
    assert st.root_position[2] == pytest.approx(30 + 5 - 0.5 * G, abs=1e-9)
    assert st.root_position[0] == pytest.approx(3.0, abs=1e-9)


def test_zero_velocity_zero_force_fixed_point():
    body = _free_body()
    sim = Simulation(body, World(), dt=1e-3, gravity=0.0)
    sim.set_root_pose(0, (1, 2, 3), (1, 0, 0, 0))
    t0 = sim.time
    sim.step()
    st = sim.state()
    np.testing.assert_allclose(st.root_position, [1, 2, 3], atol=1e-15)
    np.testing.assert_allclose(st.root_orientation, [1, 0, 0, 0], atol=1e-15)
    assert st.time == pytest.approx(t0 + 1e-3)


def _pendulum_sim(dt):
    L, m = 1.0, 1.0
    world = RigidLink("world", 0.0, np.zeros(3), np.zeros((3, 3)))
    rod = RigidLink("rod", m, np.array([L / 2, 0, 0]),
                    np.diag([1e-6, m * L * L / 12, m * L * L / 12]))
    pend = ArticulatedBody("pend", [world, rod],
                           [JointSpec("pivot", "world", "rod", np.zeros(3),
                                      ((0.0, 1.0, 0.0),), ((-50.0, 50.0),))],
                           free_root=False)
    return Simulation(pend, World(), dt=dt)


def _pendulum_angle_at(dt, t_end=1.0):
    sim = _pendulum_sim(dt)
    n = int(round(t_end / dt))
    for _ in range(n):
        sim.step()
    return sim.q_act()[0]


def test_integrator_order_at_least_four():
    ref = _pendulum_angle_at(6.25e-5)
    dts = np.array([4e-3, 2e-3, 1e-3])
    errs = np.array([abs(_pendulum_angle_at(dt) - ref) for dt in dts])
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert slope >= 3.7, f"observed order {slope:.2f}"


def test_energy_error_ratio_sixteen():
    # fourth-order scheme: halving dt divides the energy drift by ~16
    def drift(dt):
        sim = _pendulum_sim(dt)
        e0 = sim.total_energy()
        for _ in range(int(round(1.0 / dt))):
            sim.step()
        return abs(sim.total_energy() - e0)

    r = drift(4e-3) / drift(2e-3)
    assert 8.0 < r < 32.0, f"ratio {r:.1f}"


def test_nonfinite_state_aborts_with_dump():
    from athletesim.engine import SimulationError
    body = _free_body()
    sim = Simulation(body, World(), dt=1e-3)
    sim.set_root_pose(0, (0, 0, 1.0), (1, 0, 0, 0))
    sim.step()
    with pytest.raises(SimulationError) as ei:
        sim.set_root_velocity(0, (np.inf, 0, 0))
        for _ in range(10):
            sim.step()
    assert ei.value.last_good_state is not None
    assert "y" in ei.value.last_good_state


# ---------------------------------------------------------- conservation

def _floating_chain():
    l1 = RigidLink("l1", 1.0, np.array([0.1, 0, 0]), np.eye(3) * 0.01)
    l2 = RigidLink("l2", 2.0, np.array([0, 0, -0.2]),
                   np.diag([0.02, 0.03, 0.015]))
    l3 = RigidLink("l3", 0.5, np.array([0, 0.05, 0]), np.eye(3) * 0.005)
    return ArticulatedBody("chain", [l1, l2, l3], [
        JointSpec("j1", "l1", "l2", np.array([0.3, 0, 0]), ((0, 0, 1.0),),
                  ((-3.0, 3.0),)),
        JointSpec("j2", "l2", "l3", np.array([0, 0, -0.4]), ((1.0, 0, 0),),
                  ((-3.0, 3.0),))])


def _tumbling_sim(gravity):
    sim = Simulation(_floating_chain(), World(), dt=5e-4, gravity=gravity)
    rng = np.random.default_rng(7)
    sim.set_root_pose(0, (0, 0, 50.0), rng.normal(size=4))
    sim.set_root_velocity(0, rng.normal(size=3) * 0.5, rng.normal(size=3) * 2.0)
    sim.set_joint_angles(0, {"j1": 0.4, "j2": -0.7})
    sim.set_joint_angles(0, {"j1": 1.0, "j2": 2.0}, rates=True)
    return sim


def test_momentum_conservation_no_gravity():
    sim = _tumbling_sim(gravity=0.0)
    p0 = sim.linear_momentum()
    L0 = sim.angular_momentum_about_com()
    for _ in range(2000):    # one simulated second
        sim.step()
    rel_p = np.abs(sim.linear_momentum() - p0).max() / np.abs(p0).max()
    rel_L = np.abs(sim.angular_momentum_about_com() - L0).max() / np.abs(L0).max()
    assert rel_p < 1e-6
    assert rel_L < 1e-6


def test_flight_angular_momentum_with_gravity():
    # gravity exerts no torque about the com: L conserved through flight
    sim = _tumbling_sim(gravity=G)
    L0 = sim.angular_momentum_about_com()
    for _ in range(200):     # 100 ms window
        sim.step()
    rel = np.abs(sim.angular_momentum_about_com() - L0).max() / np.linalg.norm(L0)
    assert rel < 1e-3


def test_com_probe_two_symmetric_links():
    l1 = RigidLink("l1", 2.0, np.array([-0.5, 0, 0]), np.eye(3) * 0.01)
    l2 = RigidLink("l2", 2.0, np.array([0.5, 0, 0]), np.eye(3) * 0.01)
    body = ArticulatedBody("sym", [l1, l2], [
        JointSpec("j", "l1", "l2", np.zeros(3), ((0, 0, 1.0),), ((-3, 3),))])
    sim = Simulation(body, World(), dt=1e-3, gravity=0.0)
    com, vel = sim.center_of_mass()
    np.testing.assert_allclose(com, 0.0, atol=1e-12)
    np.testing.assert_allclose(vel, 0.0, atol=1e-12)


# ---------------------------------------------------------------- contact

def _foot_body():
    link = RigidLink("foot", 1.0, np.zeros(3), np.eye(3) * 0.005)
    return ArticulatedBody("foot", [link], [], contact_sites=[
        ContactSite(link="foot", local=np.array([0.0, 0.0, -0.1]),
                    kind="heel")])


def _state_at(z, vz=0.0):
    return GeneralizedState(np.array([0.0, 0, z]), np.array([1.0, 0, 0, 0]),
                            np.zeros(0), np.array([0.0, 0, vz]), np.zeros(3),
                            np.zeros(0))


def test_site_above_ground_no_force():
    out = ground_contact_forces(_foot_body(), _state_at(0.5))
    assert out == []


def test_static_penetration_spring_force():
    g = GroundModel(normal_stiffness=50e3, normal_damping=500.0,
                    stiffness_scale=0.8)
    d = 0.004
    out = ground_contact_forces(_foot_body(), _state_at(0.1 - d), ground=g)
    assert len(out) == 1
    cp, f = out[0]
    assert cp.kind == "heel"
    assert cp.penetration == pytest.approx(d, abs=1e-12)
    assert f[2] == pytest.approx(0.8 * 50e3 * d, rel=1e-9)
    np.testing.assert_allclose(f[0:2], 0.0, atol=1e-12)


def test_stiffness_scale_linearity():
    g1 = GroundModel(stiffness_scale=1.0)
    g2 = GroundModel(stiffness_scale=0.5)
    f1 = ground_contact_forces(_foot_body(), _state_at(0.095), ground=g1)[0][1]
    f2 = ground_contact_forces(_foot_body(), _state_at(0.095), ground=g2)[0][1]
    assert f2[2] == pytest.approx(0.5 * f1[2], rel=1e-9)


def test_damping_acts_only_on_approach():
    g = GroundModel()
    down = ground_contact_forces(_foot_body(), _state_at(0.095, vz=-0.3),
                                 ground=g)[0][1]
    up = ground_contact_forces(_foot_body(), _state_at(0.095, vz=+0.3),
                               ground=g)[0][1]
    static = ground_contact_forces(_foot_body(), _state_at(0.095), ground=g)[0][1]
    assert down[2] > static[2]
    assert up[2] == pytest.approx(static[2], rel=1e-9)
    assert up[2] >= 0.0


def test_friction_capped_by_coulomb_cone():
    st = GeneralizedState(np.array([0.0, 0, 0.095]), np.array([1.0, 0, 0, 0]),
                          np.zeros(0), np.array([2.0, 0, 0.0]), np.zeros(3),
                          np.zeros(0))
    g = GroundModel(friction_coefficient=0.7)
    cp, f = ground_contact_forces(_foot_body(), st, ground=g)[0]
    tangential = np.hypot(f[0], f[1])
    assert tangential <= 0.7 * f[2] + 1e-9
    assert f[0] < 0.0            # opposes slip
    assert cp.slip_velocity == pytest.approx(2.0, rel=1e-9)


def test_box_resting_equilibrium():
    # a block dropped on the ground settles with weight-balancing force
    link = RigidLink("block", 5.0, np.zeros(3), np.eye(3) * 0.05)
    body = ArticulatedBody("block", [link], [], contact_sites=[
        ContactSite("block", np.array([0.1, 0.1, -0.1])),
        ContactSite("block", np.array([-0.1, 0.1, -0.1])),
        ContactSite("block", np.array([0.1, -0.1, -0.1])),
        ContactSite("block", np.array([-0.1, -0.1, -0.1]))])
    sim = Simulation(body, World(), dt=5e-4)
    sim.set_root_pose(0, (0, 0, 0.1005), (1, 0, 0, 0))
    for _ in range(4000):
        sim.step()
    total = sum(f[2] for _, f, _ in sim.contact_report())
    assert total == pytest.approx(5.0 * G, rel=0.01)
    # under a centimetre of penetration at rest
    assert sim.state().root_position[2] == pytest.approx(0.1, abs=0.01)


def test_mat_region_softens_and_box_obstacle_supports():
    from athletesim.engine import BoxObstacle, MatRegion
    link = RigidLink("block", 5.0, np.zeros(3), np.eye(3) * 0.05)
    body = ArticulatedBody("block", [link], [], contact_sites=[
        ContactSite("block", np.array([0.0, 0.0, -0.1]))])
    world = World(mats=[MatRegion((-1, 1), (-1, 1), 0.25)],
                  boxes=[BoxObstacle(center=(5.0, 0, 0.5), size=(1, 1, 1))])
    sim = Simulation(body, world, dt=5e-4)
    sim.set_root_pose(0, (0, 0, 0.1), (1, 0, 0, 0))
    for _ in range(4000):
        sim.step()
    pen_mat = sim.contact_report()[0][0].penetration
    sim2 = Simulation(body, World(), dt=5e-4)
    sim2.set_root_pose(0, (0, 0, 0.1), (1, 0, 0, 0))
    for _ in range(4000):
        sim2.step()
    pen_hard = sim2.contact_report()[0][0].penetration
    assert pen_mat > 2.0 * pen_hard
    # drop onto the box top: settles near its top face
    sim3 = Simulation(body, world, dt=5e-4)
    sim3.set_root_pose(0, (5.0, 0, 1.12), (1, 0, 0, 0))
    for _ in range(6000):
        sim3.step()
    assert sim3.state().root_position[2] == pytest.approx(1.1, abs=0.02)


def test_springboard_deflects_under_load_and_recovers():
    from athletesim.engine import Springboard
    link = RigidLink("block", 10.0, np.zeros(3), np.eye(3) * 0.1)
    body = ArticulatedBody("block", [link], [], contact_sites=[
        ContactSite("block", np.array([0.0, 0.0, -0.1]))])
    sb = Springboard(x_range=(-0.5, 0.5), y_range=(-0.5, 0.5), top_z=0.12,
                     stiffness=20e3, damping=400.0)
    sim = Simulation(body, World(springboard=sb), dt=5e-4)
    sim.set_root_pose(0, (0, 0, 0.225), (1, 0, 0, 0))
    for _ in range(6000):
        sim.step()
    # board carries the weight: deflection ~= m g / k_board
    assert sim.aux[0] == pytest.approx(-10.0 * G / 20e3, rel=0.05)


def test_spec_step_function_round_trip():
    body = _free_body()
    st = GeneralizedState(np.array([0, 0, 5.0]), np.array([1.0, 0, 0, 0]),
                          np.zeros(0), np.zeros(3), np.zeros(3), np.zeros(0))
    st2 = step(body, st, lambda s: np.zeros(0), 1e-3)
    assert st2.time == pytest.approx(1e-3)
    assert st2.root_linear_vel[2] == pytest.approx(-G * 1e-3, rel=1e-9)
