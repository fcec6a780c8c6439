import numpy as np
import pytest

from athletesim.anthropometry import (build_humanoid, load_table, model_height,
                                      standing_com_height, zero_pose_root)
from athletesim.body import validate_model

EXPECTED_COUNTS = {
    # variant: (segments, actuated dof)
    "gymnast": (15, 30),
    "runner": (17, 30),
    "bicyclist": (15, 22),
}


@pytest.mark.parametrize("variant", sorted(EXPECTED_COUNTS))
def test_segment_and_dof_counts(variant):
    body = build_humanoid(variant)
    n_seg, n_dof = EXPECTED_COUNTS[variant]
    assert len(body.links) == n_seg
    assert body.actuated_dof_count == n_dof
    assert validate_model(body) == []


def test_gymnast_matches_reference_subject():
    body = build_humanoid("gymnast")
    assert body.total_mass == pytest.approx(64.3, abs=1e-9)
    assert model_height(body) == pytest.approx(1.64, abs=0.02)


def test_mass_fractions_sum_to_one():
    table = load_table()
    segs = table["segments"]
    one_piece = (segs["pelvis"]["mass_frac"] + segs["torso"]["mass_frac"]
                 + segs["head"]["mass_frac"]
                 + 2 * sum(segs[s]["mass_frac"] for s in
                           ("upper_arm", "forearm", "hand", "thigh", "shank", "foot")))
    assert one_piece == pytest.approx(1.0, abs=1e-12)
    assert (segs["hindfoot"]["mass_frac"] + segs["toes"]["mass_frac"]
            == pytest.approx(segs["foot"]["mass_frac"], abs=1e-12))


def test_scaling_changes_mass_and_height_proportionally():
    small = build_humanoid("runner", total_mass=55.0, height=1.60)
    assert small.total_mass == pytest.approx(55.0, abs=1e-9)
    assert model_height(small) == pytest.approx(1.60, rel=0.02)
    tall = build_humanoid("runner", height=2.00)
    assert model_height(tall) / model_height(small) == pytest.approx(2.00 / 1.60, rel=1e-6)


def test_out_of_range_scales_rejected():
    with pytest.raises(ValueError, match="height"):
        build_humanoid("gymnast", height=2.5)
    with pytest.raises(ValueError, match="mass"):
        build_humanoid("gymnast", total_mass=20.0)
    with pytest.raises(ValueError, match="variant"):
        build_humanoid("swimmer")


def test_standing_com_height_band():
    # Golden band for the stock gymnast: com sits a little above half height
    body = build_humanoid("gymnast")
    h = standing_com_height(body)
    assert 0.9 <= h <= 1.1
    assert 0.53 <= h / model_height(body) <= 0.62


def test_zero_pose_feet_on_ground():
    for variant in EXPECTED_COUNTS:
        body = build_humanoid(variant)
        root = zero_pose_root(body)
        # lowest contact site lands exactly on z=0 when the root is there
        from athletesim.anthropometry import _zero_pose_origins
        origins = _zero_pose_origins(body)
        lows = [origins[s.link][2] + s.local[2] + root[2] for s in body.contact_sites]
        assert min(lows) == pytest.approx(0.0, abs=1e-12)


def test_left_right_symmetry():
    body = build_humanoid("runner")
    for ln in ("thigh", "shank", "foot", "upper_arm", "forearm", "hand", "toes"):
        left = body.links[body.link_index(f"{ln}_l")]
        right = body.links[body.link_index(f"{ln}_r")]
        assert left.mass == pytest.approx(right.mass, rel=1e-12)
        np.testing.assert_allclose(np.abs(left.com), np.abs(right.com), atol=1e-12)
        np.testing.assert_allclose(np.diag(left.inertia), np.diag(right.inertia),
                                   rtol=1e-10)
    for jn in ("hip", "knee", "ankle", "shoulder", "elbow", "wrist"):
        jl, jr = body.joint(f"{jn}_l"), body.joint(f"{jn}_r")
        assert jl.limits == jr.limits
        assert jl.dof == jr.dof
        np.testing.assert_allclose(np.abs(jl.anchor), np.abs(jr.anchor), atol=1e-12)


def test_arm_and_leg_segment_lengths_are_anatomical():
    table = load_table()
    lm = table["landmarks"]
    assert lm["knee_length"] + lm["shank_length"] + lm["ankle_height"] == pytest.approx(
        lm["hip_height"], abs=1e-9)
    # heel-to-ball lever used by foot placement is about 0.11-0.12 of height
    assert 0.10 <= lm["heel_back"] + lm["ball_forward"] <= 0.13
