"""Parametric humanoid construction from the shipped anthropometric table.

Segment masses are fractions of total body mass; lengths are fractions of
standing height.  Each segment carries a box or capsule primitive whose
density is chosen to reproduce the segment mass, and the inertia tensor
comes from exact polyhedral integration of that primitive.

Zero pose is standing upright, feet flat on the ground plane, x forward,
y left, z up.  Every link frame is world-aligned in the zero pose with its
origin at the inboard joint anchor, so joint angles read directly as
anatomical angles (hip/shoulder sagittal axes point along -y: positive
swings the limb forward).
"""

from __future__ import annotations

import functools
import importlib.resources

import numpy as np
import yaml

from .body import ArticulatedBody, ContactSite, JointSpec, RigidLink
from .massprops import compute_mass_properties, mesh_volume
from .meshes import box_mesh, capsule_mesh

_AXIS_VECTORS = {
    "x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0),
    "-x": (-1.0, 0.0, 0.0), "-y": (0.0, -1.0, 0.0), "-z": (0.0, 0.0, -1.0),
}

VARIANTS = ("gymnast", "runner", "bicyclist")


@functools.lru_cache(maxsize=1)
def load_table() -> dict:
    """Parse and cache the packaged anthropometry table."""
    ref = importlib.resources.files("athletesim").joinpath("data/anthropometry.yaml")
    table = yaml.safe_load(ref.read_text())
    if table.get("version") != 1:
        raise ValueError(f"unsupported anthropometry table version {table.get('version')!r}")
    return table


def _axis(letter: str) -> np.ndarray:
    try:
        return np.array(_AXIS_VECTORS[letter])
    except KeyError:
        raise ValueError(f"unknown joint axis letter {letter!r}") from None


def _mirror_axis(u: np.ndarray) -> np.ndarray:
    # Right-side twin of a left-side axis: negate and reflect across the
    # sagittal plane, so equal joint angles produce mirror-symmetric motion
    # and limits carry over unchanged.  Sagittal (y) axes are fixed points.
    return np.array([-u[0], u[1], -u[2]])


def _segment_link(name, seg, height, total_mass, display_points=()):
    frac_dims = np.asarray(seg["dims"], dtype=float)
    com = np.asarray(seg["com"], dtype=float) * height
    mass = seg["mass_frac"] * total_mass
    if seg["shape"] == "box":
        mesh = box_mesh(frac_dims * height, center=com)
    elif seg["shape"] == "capsule":
        radius, core = frac_dims * height
        mesh = capsule_mesh(radius, core, axis="z", center=com)
    else:
        raise ValueError(f"segment {name}: unknown shape {seg['shape']!r}")
    density = mass / mesh_volume(mesh)
    props = compute_mass_properties(mesh, density)
    return RigidLink(name=name, mass=props.mass, com=props.com,
                     inertia=props.inertia, geometry=mesh,
                     display_points=tuple(tuple(np.asarray(p, dtype=float) * height)
                                          for p in display_points))


def _joint_def(table, variant_cfg, joint_name):
    cfg = dict(table["joints"][joint_name])
    cfg.update(variant_cfg.get("joints", {}).get(joint_name, {}))
    return cfg


def _make_joint(name, parent, child, anchor, cfg, side=None):
    axes = [_axis(a) for a in cfg["axes"]]
    limits = [tuple(lim) for lim in cfg["limits"]]
    if side == "r":
        axes = [_mirror_axis(u) for u in axes]
    return JointSpec(name=name, parent=parent, child=child,
                     anchor=np.asarray(anchor, dtype=float),
                     axes=tuple(axes), limits=tuple(limits),
                     torque_limit=float(cfg["torque_limit"]))


def build_humanoid(variant: str, total_mass: float | None = None,
                   height: float | None = None) -> ArticulatedBody:
    """Assemble one of the stock humanoid models.

    `variant` picks the joint layout ("gymnast", "runner" or "bicyclist");
    optional `total_mass` [kg] and `height` [m] rescale the whole model
    within the table's validity ranges.
    """
    table = load_table()
    if variant not in table["variants"]:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    vcfg = table["variants"][variant]
    H = float(height if height is not None else vcfg["height"])
    M = float(total_mass if total_mass is not None else vcfg["total_mass"])
    lo, hi = table["scale_ranges"]["height"]
    if not lo <= H <= hi:
        raise ValueError(f"height {H} m outside supported range [{lo}, {hi}]")
    lo, hi = table["scale_ranges"]["total_mass"]
    if not lo <= M <= hi:
        raise ValueError(f"total mass {M} kg outside supported range [{lo}, {hi}]")

    lm = table["landmarks"]
    segs = table["segments"]
    two_piece = vcfg["feet"] == "two_piece"

    def L(key):
        return lm[key] * H

    links = []
    joints = []
    sites = []

    hip_y = lm["hip_half_spacing"]
    sole = lm["ankle_height"]

    links.append(_segment_link("pelvis", segs["pelvis"], H, M, display_points=(
        ((0.0, -hip_y, 0.0), (0.0, hip_y, 0.0)),
        ((0.0, 0.0, 0.0), (0.0, 0.0, lm["waist_rise"])),
    )))
    # bumper sites on the trunk, skull and limb joints; they never touch
    # ground during normal behaviors but let a crashed body come to rest
    # on the floor instead of hanging half sunk from its feet and hands
    pd = segs["pelvis"]["dims"]
    pc = segs["pelvis"]["com"]
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            sites.append(ContactSite(link="pelvis", kind="other", local=np.array(
                [(pc[0] + sx * 0.45 * pd[0]) * H,
                 (pc[1] + sy * 0.45 * pd[1]) * H, pc[2] * H])))
    links.append(_segment_link("torso", segs["torso"], H, M, display_points=(
        ((0.0, 0.0, 0.0), (0.0, 0.0, lm["neck_rise"])),
        ((0.0, -lm["shoulder_half_spacing"], lm["shoulder_rise"]),
         (0.0, lm["shoulder_half_spacing"], lm["shoulder_rise"])),
    )))
    for sy in (-1.0, 1.0):
        sites.append(ContactSite(link="torso", kind="other", local=np.array(
            [0.0, sy * L("shoulder_half_spacing"), L("shoulder_rise")])))
    joints.append(_make_joint("waist", "pelvis", "torso",
                              (0.0, 0.0, L("waist_rise")),
                              _joint_def(table, vcfg, "waist")))
    links.append(_segment_link("head", segs["head"], H, M, display_points=(
        ((0.0, 0.0, 0.0), (0.0, 0.0, 0.13)),
    )))
    joints.append(_make_joint("neck", "torso", "head",
                              (0.0, 0.0, L("neck_rise")),
                              _joint_def(table, vcfg, "neck")))
    hd = segs["head"]["dims"]
    hc = segs["head"]["com"]
    sites.append(ContactSite(link="head", kind="other", local=np.array(
        [0.0, 0.0, (hc[2] + 0.5 * hd[1] + hd[0]) * H])))

    for side, sgn in (("l", 1.0), ("r", -1.0)):
        ua, fa, hand = f"upper_arm_{side}", f"forearm_{side}", f"hand_{side}"
        links.append(_segment_link(ua, segs["upper_arm"], H, M, display_points=(
            ((0.0, 0.0, 0.0), (0.0, 0.0, -lm["upper_arm_length"])),)))
        joints.append(_make_joint(f"shoulder_{side}", "torso", ua,
                                  (0.0, sgn * L("shoulder_half_spacing"), L("shoulder_rise")),
                                  _joint_def(table, vcfg, "shoulder"), side=side))
        links.append(_segment_link(fa, segs["forearm"], H, M, display_points=(
            ((0.0, 0.0, 0.0), (0.0, 0.0, -lm["forearm_length"])),)))
        joints.append(_make_joint(f"elbow_{side}", ua, fa,
                                  (0.0, 0.0, -L("upper_arm_length")),
                                  _joint_def(table, vcfg, "elbow"), side=side))
        links.append(_segment_link(hand, segs["hand"], H, M, display_points=(
            ((0.0, 0.0, 0.0), (0.0, 0.0, -lm["hand_length"])),)))
        joints.append(_make_joint(f"wrist_{side}", fa, hand,
                                  (0.0, 0.0, -L("forearm_length")),
                                  _joint_def(table, vcfg, "wrist"), side=side))
        sites.append(ContactSite(link=hand, local=np.array([0.0, 0.0, -0.060 * H]),
                                 kind="hand", damping_scale=0.5))
        sites.append(ContactSite(link=fa, kind="other", damping_scale=0.5,
                                 local=np.array([0.0, 0.0, 0.0])))

        thigh, shank = f"thigh_{side}", f"shank_{side}"
        links.append(_segment_link(thigh, segs["thigh"], H, M, display_points=(
            ((0.0, 0.0, 0.0), (0.0, 0.0, -lm["knee_length"])),)))
        joints.append(_make_joint(f"hip_{side}", "pelvis", thigh,
                                  (0.0, sgn * L("hip_half_spacing"), 0.0),
                                  _joint_def(table, vcfg, "hip"), side=side))
        links.append(_segment_link(shank, segs["shank"], H, M, display_points=(
            ((0.0, 0.0, 0.0), (0.0, 0.0, -lm["shank_length"])),)))
        joints.append(_make_joint(f"knee_{side}", thigh, shank,
                                  (0.0, 0.0, -L("knee_length")),
                                  _joint_def(table, vcfg, "knee"), side=side))
        sites.append(ContactSite(link=shank, kind="other", damping_scale=0.8,
                                 local=np.array([0.0, 0.0, 0.0])))

        if two_piece:
            foot, toes = f"foot_{side}", f"toes_{side}"
            links.append(_segment_link(foot, segs["hindfoot"], H, M, display_points=(
                ((0.0, 0.0, 0.0), (-lm["heel_back"], 0.0, -lm["ankle_height"])),
                ((-lm["heel_back"], 0.0, -lm["ankle_height"]),
                 (lm["ball_forward"], 0.0, -lm["ankle_height"])),)))
            joints.append(_make_joint(f"ankle_{side}", shank, foot,
                                      (0.0, 0.0, -L("shank_length")),
                                      _joint_def(table, vcfg, "ankle"), side=side))
            toe_len = lm["foot_length"] - lm["heel_back"] - lm["ball_forward"]
            toe_drop = lm["ankle_height"] - lm["ball_joint_rise"]
            links.append(_segment_link(toes, segs["toes"], H, M, display_points=(
                ((0.0, 0.0, 0.0), (toe_len, 0.0, -lm["ball_joint_rise"])),)))
            joints.append(_make_joint(f"ball_{side}", foot, toes,
                                      (L("ball_forward"), 0.0, -toe_drop * H),
                                      _joint_def(table, vcfg, "ball"), side=side))
            sites.append(ContactSite(link=foot, kind="heel", damping_scale=0.8,
                                     local=np.array([-L("heel_back"), 0.0, -sole * H])))
            sites.append(ContactSite(link=toes, kind="ball", damping_scale=0.35,
                                     local=np.array([0.0, 0.0, -L("ball_joint_rise")])))
            sites.append(ContactSite(link=toes, kind="toe", damping_scale=0.35,
                                     local=np.array([toe_len * H, 0.0, -L("ball_joint_rise")])))
        else:
            foot = f"foot_{side}"
            links.append(_segment_link(foot, segs["foot"], H, M, display_points=(
                ((0.0, 0.0, 0.0), (-lm["heel_back"], 0.0, -lm["ankle_height"])),
                ((-lm["heel_back"], 0.0, -lm["ankle_height"]),
                 (lm["foot_length"] - lm["heel_back"], 0.0, -lm["ankle_height"])),)))
            joints.append(_make_joint(f"ankle_{side}", shank, foot,
                                      (0.0, 0.0, -L("shank_length")),
                                      _joint_def(table, vcfg, "ankle"), side=side))
            sites.append(ContactSite(link=foot, kind="heel", damping_scale=0.7,
                                     local=np.array([-L("heel_back"), 0.0, -sole * H])))
            sites.append(ContactSite(link=foot, kind="ball", damping_scale=0.7,
                                     local=np.array([L("ball_forward"), 0.0, -sole * H])))
            sites.append(ContactSite(link=foot, kind="toe", damping_scale=0.7,
                                     local=np.array([(lm["foot_length"] - lm["heel_back"]) * H,
                                                     0.0, -sole * H])))

    body = ArticulatedBody(name=variant, links=links, joints=joints,
                           contact_sites=sites, free_root=True)
    problems = validate_anthropometry(body, expected_mass=M)
    if problems:
        raise ValueError("anthropometry table produced an invalid model:\n  "
                         + "\n  ".join(problems))
    return body


def zero_pose_root(variant_or_body, height: float | None = None) -> np.ndarray:
    """Root position that puts the zero-pose soles exactly on the ground."""
    if isinstance(variant_or_body, ArticulatedBody):
        origins = _zero_pose_origins(variant_or_body)
        floor = min(origins[s.link][2] + s.local[2]
                    for s in variant_or_body.contact_sites)
        return np.array([0.0, 0.0, -floor])
    table = load_table()
    H = float(height if height is not None else
              table["variants"][variant_or_body]["height"])
    return np.array([0.0, 0.0, table["landmarks"]["hip_height"] * H])


def model_height(body: ArticulatedBody) -> float:
    """Standing height implied by link geometry: sole-to-crown z extent."""
    zs = _zero_pose_geometry_z(body)
    return float(zs.max() - zs.min())


def standing_com_height(body: ArticulatedBody) -> float:
    """Whole-body centre of mass height above the soles in the zero pose."""
    origins = _zero_pose_origins(body)
    com = np.zeros(3)
    for link in body.links:
        com += link.mass * (origins[link.name] + link.com)
    com /= body.total_mass
    return float(com[2] - _zero_pose_geometry_z(body).min())


def validate_anthropometry(body: ArticulatedBody, expected_mass: float | None = None):
    """Sanity checks beyond structural validation; returns violation strings."""
    from .body import validate_model

    problems = list(validate_model(body))
    if expected_mass is not None and abs(body.total_mass - expected_mass) > 1e-6 * expected_mass:
        problems.append(f"total mass {body.total_mass:.6f} != expected {expected_mass:.6f}")
    if body.contact_sites:
        origins = _zero_pose_origins(body)
        site_floor = min(origins[s.link][2] + s.local[2] for s in body.contact_sites)
        geom_floor = _zero_pose_geometry_z(body).min()
        if geom_floor < site_floor - 2e-3:
            problems.append(f"zero-pose geometry dips {site_floor - geom_floor:.4f} m "
                            "below the lowest contact site")
    return problems


def _zero_pose_origins(body: ArticulatedBody):
    # Zero pose: all link frames world-aligned, so origins chain by anchors.
    origins = {body.links[0].name: np.zeros(3)}
    for j in body.joints:
        origins[j.child] = origins[j.parent] + j.anchor
    return origins


def _zero_pose_geometry_z(body: ArticulatedBody) -> np.ndarray:
    origins = _zero_pose_origins(body)
    zs = []
    for link in body.links:
        base = origins[link.name]
        if link.geometry is not None:
            zs.append(link.geometry[0][:, 2] + base[2])
        else:
            zs.append(np.array([base[2] + link.com[2]]))
    return np.concatenate(zs)
