import numpy as np
import pytest

from athletesim.body import (ArticulatedBody, ContactSite, JointSpec,
                             RigidLink, validate_model)


def _link(name, mass=1.0, inertia=None):
    if inertia is None:
        inertia = np.eye(3) * 0.01
    return RigidLink(name=name, mass=mass, com=np.zeros(3), inertia=inertia)


def _joint(name, parent, child, axes=((0.0, 1.0, 0.0),), limits=((-1.0, 1.0),)):
    return JointSpec(name=name, parent=parent, child=child,
                     anchor=np.zeros(3), axes=axes, limits=limits)


def _chain():
    links = [_link("a"), _link("b"), _link("c")]
    joints = [_joint("j1", "a", "b"), _joint("j2", "b", "c")]
    return links, joints


def test_valid_chain_passes():
    links, joints = _chain()
    assert validate_model(ArticulatedBody("m", links, joints)) == []


def test_negative_mass_flagged():
    links, joints = _chain()
    links[1] = _link("b", mass=-2.0)
    problems = validate_model(ArticulatedBody("m", links, joints))
    assert any("negative mass" in p and "b" in p for p in problems)


def test_asymmetric_inertia_flagged():
    links, joints = _chain()
    bad = np.eye(3) * 0.01
    bad[0, 1] = 5e-3
    links[2] = _link("c", inertia=bad)
    problems = validate_model(ArticulatedBody("m", links, joints))
    assert any("not symmetric" in p for p in problems)


def test_triangle_inequality_flagged():
    links, joints = _chain()
    links[0] = _link("a", inertia=np.diag([1.0, 0.1, 0.1]))
    problems = validate_model(ArticulatedBody("m", links, joints))
    assert any("triangle inequality" in p for p in problems)


def test_cycle_detected_and_named():
    links = [_link("a"), _link("b"), _link("c")]
    joints = [_joint("j1", "a", "b"), _joint("j2", "c", "c")]
    problems = validate_model(ArticulatedBody("m", links, joints))
    assert any("cycle" in p and "c" in p for p in problems)


def test_two_parents_flagged():
    links, joints = _chain()
    joints.append(_joint("j3", "a", "c"))
    problems = validate_model(ArticulatedBody("m", links, joints))
    assert any("two parent" in p for p in problems)


def test_disconnected_link_flagged():
    links = [_link("a"), _link("b"), _link("c")]
    joints = [_joint("j1", "a", "b")]
    problems = validate_model(ArticulatedBody("m", links, joints))
    assert any("not connected" in p and "c" in p for p in problems)


def test_non_orthonormal_axes_flagged():
    links, joints = _chain()
    joints[0] = _joint("j1", "a", "b",
                       axes=((0, 1, 0), (0.1, 0.99, 0)),
                       limits=((-1, 1), (-1, 1)))
    problems = validate_model(ArticulatedBody("m", links, joints))
    assert any("orthonormal" in p for p in problems)


def test_bad_limit_ordering_flagged():
    links, joints = _chain()
    joints[1] = _joint("j2", "b", "c", limits=((0.5, -0.5),))
    problems = validate_model(ArticulatedBody("m", links, joints))
    assert any("limit" in p for p in problems)


def test_unknown_site_link_flagged():
    links, joints = _chain()
    body = ArticulatedBody("m", links, joints,
                           contact_sites=[ContactSite(link="zz", local=np.zeros(3))])
    problems = validate_model(body)
    assert any("unknown link" in p for p in problems)


def test_dof_name_expansion():
    links, joints = _chain()
    joints[0] = _joint("j1", "a", "b",
                       axes=((0, 0, 1), (1, 0, 0)),
                       limits=((-1, 1), (-1, 1)))
    body = ArticulatedBody("m", links, joints)
    assert body.dof_names() == ["j1_z", "j1_x", "j2"]
    assert body.actuated_dof_count == 3
