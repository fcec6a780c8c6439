"""Numba kernels for articulated rigid-body dynamics.

Spatial vectors are 6-vectors [angular; linear] in body coordinates, and
transforms follow the articulated-body convention X = [[E, 0], [-E r~, E]]
with E the parent->child rotation and r the child origin in the parent
frame.  Bodies are 1-DOF revolute after compilation; free roots carry a
6-DOF block.  Gravity is handled by working in gravity-offset acceleration
space, so it never appears as an explicit force.

State vector layout: y = [q (nq), v (nv), aux], where roots contribute
[position(3), quaternion(4)] to q and [omega_body(3), v_origin_body(3)]
to v, revolute bodies one angle/rate each, and aux holds springboard
deflection state when present.
"""

import numpy as np
from numba import njit

JT_FREE = 0
JT_REVOLUTE = 1

KIND_HEEL = 0
KIND_TOE = 1
KIND_BALL = 2
KIND_HAND = 3
KIND_WHEEL = 4
KIND_OTHER = 5


# ---------------------------------------------------------------- algebra

@njit(cache=True)
def _rodrigues(u, ang, R):
    c = np.cos(ang)
    s = np.sin(ang)
    v = 1.0 - c
    x, y, z = u[0], u[1], u[2]
    R[0, 0] = c + x * x * v
    R[0, 1] = x * y * v - z * s
    R[0, 2] = x * z * v + y * s
    R[1, 0] = y * x * v + z * s
    R[1, 1] = c + y * y * v
    R[1, 2] = y * z * v - x * s
    R[2, 0] = z * x * v - y * s
    R[2, 1] = z * y * v + x * s
    R[2, 2] = c + z * z * v


@njit(cache=True)
def _quat_to_mat(q, R):
    n = np.sqrt(q[0] ** 2 + q[1] ** 2 + q[2] ** 2 + q[3] ** 2)
    w, x, y, z = q[0] / n, q[1] / n, q[2] / n, q[3] / n
    R[0, 0] = 1 - 2 * (y * y + z * z)
    R[0, 1] = 2 * (x * y - w * z)
    R[0, 2] = 2 * (x * z + w * y)
    R[1, 0] = 2 * (x * y + w * z)
    R[1, 1] = 1 - 2 * (x * x + z * z)
    R[1, 2] = 2 * (y * z - w * x)
    R[2, 0] = 2 * (x * z - w * y)
    R[2, 1] = 2 * (y * z + w * x)
    R[2, 2] = 1 - 2 * (x * x + y * y)


@njit(cache=True)
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@njit(cache=True)
def _mat_vec(E, v, out):
    for i in range(3):
        out[i] = E[i, 0] * v[0] + E[i, 1] * v[1] + E[i, 2] * v[2]


@njit(cache=True)
def _mat_t_vec(E, v, out):
    for i in range(3):
        out[i] = E[0, i] * v[0] + E[1, i] * v[1] + E[2, i] * v[2]


@njit(cache=True)
def _xmat(E, r, X):
    """Motion transform parent->child into a 6x6."""
    for i in range(3):
        for j in range(3):
            X[i, j] = E[i, j]
            X[i, j + 3] = 0.0
            X[i + 3, j + 3] = E[i, j]
    # lower-left block: -E r~
    for i in range(3):
        X[i + 3, 0] = -(E[i, 1] * r[2] - E[i, 2] * r[1])
        X[i + 3, 1] = -(E[i, 2] * r[0] - E[i, 0] * r[2])
        X[i + 3, 2] = -(E[i, 0] * r[1] - E[i, 1] * r[0])


@njit(cache=True)
def _xform_motion(E, r, v, out):
    """out = X v for the transform above, without building the matrix."""
    wr = np.empty(3)
    _cross(v[0:3], r, wr)
    tmp = np.empty(3)
    for i in range(3):
        tmp[i] = v[3 + i] + wr[i]
    _mat_vec(E, v[0:3], out[0:3])
    _mat_vec(E, tmp, out[3:6])


@njit(cache=True)
def _crf_apply(v, f, out):
    """Force cross product: out = v x* f, v motion, f force."""
    w = v[0:3]
    u = v[3:6]
    n = f[0:3]
    lin = f[3:6]
    a = np.empty(3)
    b = np.empty(3)
    _cross(w, n, a)
    _cross(u, lin, b)
    for i in range(3):
        out[i] = a[i] + b[i]
    _cross(w, lin, a)
    for i in range(3):
        out[3 + i] = a[i]


# ----------------------------------------------------- forward kinematics

@njit(cache=True)
def fk_pass(q, v, parent, jtype, axis, anchor, qidx, vidx,
            R, o, E_up, vsp):
    """World pose and body-coordinate spatial velocity of every body."""
    nb = parent.shape[0]
    Rj = np.empty((3, 3))
    tmp = np.empty(3)
    wp = np.empty(3)
    vtmp = np.empty(6)
    for i in range(nb):
        p = parent[i]
        if jtype[i] == JT_FREE:
            qi = qidx[i]
            _quat_to_mat(q[qi + 3:qi + 7], R[i])
            for k in range(3):
                o[i, k] = q[qi + k]
            for a in range(3):
                for b in range(3):
                    E_up[i, a, b] = R[i, b, a]
            vi = vidx[i]
            for k in range(6):
                vsp[i, k] = v[vi + k]
        else:
            _rodrigues(axis[i], q[qidx[i]], Rj)
            # E_up = R_i^T R_p = Rj^T
            for a in range(3):
                for b in range(3):
                    E_up[i, a, b] = Rj[b, a]
            if p < 0:
                for a in range(3):
                    for b in range(3):
                        R[i, a, b] = Rj[a, b]
                    o[i, a] = anchor[i, a]
                for k in range(6):
                    vtmp[k] = 0.0
            else:
                for a in range(3):
                    for b in range(3):
                        s = 0.0
                        for k in range(3):
                            s += R[p, a, k] * Rj[k, b]
                        R[i, a, b] = s
                _mat_vec(R[p], anchor[i], tmp)
                for k in range(3):
                    o[i, k] = o[p, k] + tmp[k]
                for k in range(6):
                    vtmp[k] = vsp[p, k]
            # vsp[i] = X vtmp + S qd
            _cross(vtmp[0:3], anchor[i], wp)
            for k in range(3):
                tmp[k] = vtmp[3 + k] + wp[k]
            _mat_vec(E_up[i], vtmp[0:3], vsp[i, 0:3])
            _mat_vec(E_up[i], tmp, vsp[i, 3:6])
            qd = v[vidx[i]]
            for k in range(3):
                vsp[i, k] += axis[i, k] * qd


@njit(cache=True)
def site_world(R, o, body, local, pos, vel, vsp):
    """World position and velocity of a point fixed on a body."""
    b = body
    tmp = np.empty(3)
    _mat_vec(R[b], local, tmp)
    for k in range(3):
        pos[k] = o[b, k] + tmp[k]
    wxs = np.empty(3)
    _cross(vsp[b, 0:3], local, wxs)
    for k in range(3):
        tmp[k] = vsp[b, 3 + k] + wxs[k]
    _mat_vec(R[b], tmp, vel)


@njit(cache=True)
def _apply_world_force(bidx, P, F, R, o, f_ext):
    """Accumulate world force F at world point P as a body spatial force."""
    rel = np.empty(3)
    for k in range(3):
        rel[k] = P[k] - o[bidx, k]
    mom = np.empty(3)
    _cross(rel, F, mom)
    nb = np.empty(3)
    fb = np.empty(3)
    _mat_t_vec(R[bidx], mom, nb)
    _mat_t_vec(R[bidx], F, fb)
    for k in range(3):
        f_ext[bidx, k] += nb[k]
        f_ext[bidx, 3 + k] += fb[k]


# ----------------------------------------------------------- environment

@njit(cache=True)
def _surface_at(px, py, mats, sb_par, aux):
    """Supporting surface under (x, y): (height, vertical vel, scale, on_board)."""
    z = 0.0
    vz = 0.0
    scale = 1.0
    on_board = False
    for m in range(mats.shape[0]):
        if mats[m, 0] <= px <= mats[m, 1] and mats[m, 2] <= py <= mats[m, 3]:
            scale = mats[m, 4]
            z = mats[m, 5]
    if sb_par[0] > 0.5:
        if sb_par[1] <= px <= sb_par[2] and sb_par[3] <= py <= sb_par[4]:
            z = sb_par[5] + aux[0]
            vz = aux[1]
            scale = 1.0
            on_board = True
    return z, vz, scale, on_board


@njit(cache=True)
def _penalty_force(pen, rate, slip_x, slip_y, k, c, mu, scale, vreg, dscale, F):
    """Spring-damper normal force + slip-velocity friction.

    Used for rolling contact (wheel rims), where creep against slip speed
    is the physically right model.  pen: penetration depth (>0 in
    contact); rate: d(height)/dt of the contact point relative to the
    surface (negative when approaching).  Returns the normal magnitude;
    F accumulates (fx, fy, fn).
    """
    damp = 0.0
    if rate < 0.0:
        damp = -rate
    N = scale * (k * pen + c * dscale * damp)
    if N < 0.0:
        N = 0.0
    s = np.sqrt(slip_x ** 2 + slip_y ** 2)
    if s > 1e-12:
        ft = mu * N * np.tanh(s / vreg)
        F[0] = -ft * slip_x / s
        F[1] = -ft * slip_y / s
    else:
        F[0] = 0.0
        F[1] = 0.0
    F[2] = N
    return N


@njit(cache=True)
def _site_force(pen, rate, slip_x, slip_y, disp_x, disp_y,
                k, c, mu, scale, dscale, F):
    """Normal spring-damper + anchored tangential friction for point sites.

    Tangential force is a spring against the displacement from the stick
    anchor plus a slip damper, clamped to the friction cone.  The anchor
    keeps loaded feet and hands from creeping; a pure velocity law would
    need an unstably steep slope at the fixed step to hold the same load
    on a light segment.
    """
    damp = 0.0
    if rate < 0.0:
        damp = -rate
    N = scale * (k * pen + c * dscale * damp)
    if N < 0.0:
        N = 0.0
    ftx = -scale * (k * disp_x + c * dscale * slip_x)
    fty = -scale * (k * disp_y + c * dscale * slip_y)
    ft = np.sqrt(ftx * ftx + fty * fty)
    cap = mu * N
    if ft > cap and ft > 1e-12:
        ftx *= cap / ft
        fty *= cap / ft
    F[0] = ftx
    F[1] = fty
    F[2] = N
    return N


@njit(cache=True)
def _box_face(pos, box):
    """Nearest inside face of a box: (pen, nx, ny, nz, face).

    face is -1 (pen meaningless) when the point is outside the box.
    """
    x0, x1, y0, y1 = box[0], box[1], box[2], box[3]
    z0, z1 = box[4], box[5]
    px, py, pz = pos[0], pos[1], pos[2]
    if not (x0 < px < x1 and y0 < py < y1 and z0 < pz < z1):
        return 0.0, 0.0, 0.0, 1.0, -1
    best = px - x0
    nx, ny, nz = -1.0, 0.0, 0.0
    face = 0
    if x1 - px < best:
        best = x1 - px
        nx, ny, nz = 1.0, 0.0, 0.0
        face = 1
    if py - y0 < best:
        best = py - y0
        nx, ny, nz = 0.0, -1.0, 0.0
        face = 2
    if y1 - py < best:
        best = y1 - py
        nx, ny, nz = 0.0, 1.0, 0.0
        face = 3
    if pz - z0 < best:
        best = pz - z0
        nx, ny, nz = 0.0, 0.0, -1.0
        face = 4
    if z1 - pz < best:
        best = z1 - pz
        nx, ny, nz = 0.0, 0.0, 1.0
        face = 5
    return best, nx, ny, nz, face


@njit(cache=True)
def _box_force(pos, vel, box, bx, k, c, mu, dscale, tag, ax, ay, az, F):
    """Contact with a solid box: push out through the nearest face."""
    pen, nx, ny, nz, face = _box_face(pos, box)
    if face < 0:
        F[0] = 0.0
        F[1] = 0.0
        F[2] = 0.0
        return 0.0
    scale = box[6]
    vn = vel[0] * nx + vel[1] * ny + vel[2] * nz
    damp = -vn if vn < 0.0 else 0.0
    N = scale * (k * pen + c * dscale * damp)
    if N < 0.0:
        N = 0.0
    tx = vel[0] - vn * nx
    ty = vel[1] - vn * ny
    tz = vel[2] - vn * nz
    dx = 0.0
    dy = 0.0
    dz = 0.0
    if tag == 8.0 * (bx + 1) + face:
        dx = pos[0] - ax
        dy = pos[1] - ay
        dz = pos[2] - az
        dn = dx * nx + dy * ny + dz * nz
        dx -= dn * nx
        dy -= dn * ny
        dz -= dn * nz
    fx = -scale * (k * dx + c * dscale * tx)
    fy = -scale * (k * dy + c * dscale * ty)
    fz = -scale * (k * dz + c * dscale * tz)
    ft = np.sqrt(fx * fx + fy * fy + fz * fz)
    cap = mu * N
    if ft > cap and ft > 1e-12:
        fx *= cap / ft
        fy *= cap / ft
        fz *= cap / ft
    F[0] = N * nx + fx
    F[1] = N * ny + fy
    F[2] = N * nz + fz
    return N


@njit(cache=True)
def contact_pass(q, v, aux, R, o, vsp, f_ext,
                 site_body, site_local, site_dscale, anch,
                 wheel_body, wheel_center, wheel_axis, wheel_radius,
                 ground_par, mats, boxes, sb_par,
                 report):
    """All ground/mat/box/springboard contact forces.

    report rows: one per site then one per wheel:
    (fx, fy, fz, penetration, slip_speed, active).
    Returns the total normal load on the springboard.
    """
    gk, gc, gmu, gscale, vreg = (ground_par[0], ground_par[1], ground_par[2],
                                 ground_par[3], ground_par[4])
    pos = np.empty(3)
    vel = np.empty(3)
    F = np.empty(3)
    Fb = np.empty(3)
    board_load = 0.0
    ns = site_body.shape[0]
    for s in range(ns):
        b = site_body[s]
        site_world(R, o, b, site_local[s], pos, vel, vsp)
        for k in range(6):
            report[s, k] = 0.0
        zs, vzs, mscale, on_board = _surface_at(pos[0], pos[1], mats, sb_par, aux)
        pen = zs - pos[2]
        total_n = 0.0
        if pen > 0.0:
            dx = 0.0
            dy = 0.0
            if anch[s, 0] == 0.0:
                dx = pos[0] - anch[s, 1]
                dy = pos[1] - anch[s, 2]
            N = _site_force(pen, vel[2] - vzs, vel[0], vel[1], dx, dy,
                            gk, gc, gmu, gscale * mscale,
                            site_dscale[s], F)
            _apply_world_force(b, pos, F, R, o, f_ext)
            if on_board:
                board_load += N
            total_n = N
            report[s, 0] = F[0]
            report[s, 1] = F[1]
            report[s, 2] = F[2]
            report[s, 3] = pen
            report[s, 4] = np.sqrt(vel[0] ** 2 + vel[1] ** 2)
            report[s, 5] = 1.0
        for bx in range(boxes.shape[0]):
            N = _box_force(pos, vel, boxes[bx], bx, gk, gc, gmu,
                           site_dscale[s], anch[s, 0],
                           anch[s, 1], anch[s, 2], anch[s, 3], Fb)
            if N > 0.0:
                _apply_world_force(b, pos, Fb, R, o, f_ext)
                report[s, 0] += Fb[0]
                report[s, 1] += Fb[1]
                report[s, 2] += Fb[2]
                report[s, 5] = 1.0
                vn = np.sqrt(Fb[0] ** 2 + Fb[1] ** 2 + Fb[2] ** 2)
                if vn > total_n:
                    report[s, 3] = _box_pen(pos, boxes[bx])
                    report[s, 4] = np.sqrt(vel[0] ** 2 + vel[1] ** 2 + vel[2] ** 2)
    nw = wheel_body.shape[0]
    for w in range(nw):
        b = wheel_body[w]
        row = ns + w
        for k in range(6):
            report[row, k] = 0.0
        # world axle point and axis
        _mat_vec(R[b], wheel_center[w], pos)
        cx = o[b, 0] + pos[0]
        cy = o[b, 1] + pos[1]
        cz = o[b, 2] + pos[2]
        _mat_vec(R[b], wheel_axis[w], vel)   # vel reused as world axis
        ax, ay, az = vel[0], vel[1], vel[2]
        # in-plane direction closest to straight down
        dx = -az * ax
        dy = -az * ay
        dz = -(1.0 - az * az)
        dn = np.sqrt(dx * dx + dy * dy + dz * dz)
        if dn < 1e-9:
            continue
        dx /= dn
        dy /= dn
        dz /= dn
        rr = wheel_radius[w]
        pw = np.empty(3)
        pw[0] = cx + rr * dx
        pw[1] = cy + rr * dy
        pw[2] = cz + rr * dz
        # material velocity of the rim point
        loc = np.empty(3)
        rel = np.empty(3)
        rel[0] = pw[0] - o[b, 0]
        rel[1] = pw[1] - o[b, 1]
        rel[2] = pw[2] - o[b, 2]
        _mat_t_vec(R[b], rel, loc)
        wvel = np.empty(3)
        site_world(R, o, b, loc, pos, wvel, vsp)
        zs, vzs, mscale, on_board = _surface_at(pw[0], pw[1], mats, sb_par, aux)
        pen = zs - pw[2]
        if pen > 0.0:
            N = _penalty_force(pen, wvel[2] - vzs, wvel[0], wvel[1],
                               gk, gc, gmu, gscale * mscale, vreg, 1.0, F)
            _apply_world_force(b, pw, F, R, o, f_ext)
            if on_board:
                board_load += N
            report[row, 0] = F[0]
            report[row, 1] = F[1]
            report[row, 2] = F[2]
            report[row, 3] = pen
            report[row, 4] = np.sqrt(wvel[0] ** 2 + wvel[1] ** 2)
            report[row, 5] = 1.0
    return board_load


@njit(cache=True)
def update_anchors(q, v, aux, parent, jtype, axis, anchor, qidx, vidx,
                   site_body, site_local, site_dscale,
                   ground_par, mats, boxes, sb_par,
                   R, o, E_up, vsp, anch):
    """Seed or slide the per-site friction anchors after a completed step.

    anch rows: (surface tag, ax, ay, az).  Tag -1 = airborne, 0 = the
    ground/mat/springboard plane, 8*(box+1)+face = a box face.  Anchors
    are frozen during the integrator stages; here the stick spring is
    projected back to the friction-cone boundary, which is where the
    Coulomb slip happens.
    """
    fk_pass(q, v, parent, jtype, axis, anchor, qidx, vidx, R, o, E_up, vsp)
    gk = ground_par[0]
    gc = ground_par[1]
    gmu = ground_par[2]
    gscale = ground_par[3]
    pos = np.empty(3)
    vel = np.empty(3)
    for s in range(site_body.shape[0]):
        b = site_body[s]
        site_world(R, o, b, site_local[s], pos, vel, vsp)
        zs, vzs, mscale, on_board = _surface_at(pos[0], pos[1], mats,
                                                sb_par, aux)
        best_pen = zs - pos[2]
        best_tag = 0.0 if best_pen > 0.0 else -1.0
        bnx, bny, bnz = 0.0, 0.0, 1.0
        bscale = gscale * mscale
        brate = vel[2] - vzs
        for bx in range(boxes.shape[0]):
            pen, nx, ny, nz, face = _box_face(pos, boxes[bx])
            if face >= 0 and pen > best_pen:
                best_pen = pen
                best_tag = 8.0 * (bx + 1) + face
                bnx, bny, bnz = nx, ny, nz
                bscale = boxes[bx, 6]
                brate = vel[0] * nx + vel[1] * ny + vel[2] * nz
        if best_tag < -0.5:
            anch[s, 0] = -1.0
            continue
        if anch[s, 0] != best_tag:
            anch[s, 0] = best_tag
            anch[s, 1] = pos[0]
            anch[s, 2] = pos[1]
            anch[s, 3] = pos[2]
            continue
        damp = -brate if brate < 0.0 else 0.0
        n_end = bscale * (gk * best_pen + gc * site_dscale[s] * damp)
        if n_end < 0.0:
            n_end = 0.0
        dx = pos[0] - anch[s, 1]
        dy = pos[1] - anch[s, 2]
        dz = pos[2] - anch[s, 3]
        dn = dx * bnx + dy * bny + dz * bnz
        dx -= dn * bnx
        dy -= dn * bny
        dz -= dn * bnz
        r = np.sqrt(dx * dx + dy * dy + dz * dz)
        rmax = gmu * n_end / (bscale * gk)
        if r > rmax and r > 1e-12:
            f = rmax / r
            anch[s, 1] = pos[0] - dx * f
            anch[s, 2] = pos[1] - dy * f
            anch[s, 3] = pos[2] - dz * f


@njit(cache=True)
def _box_pen(pos, box):
    best = pos[0] - box[0]
    if box[1] - pos[0] < best:
        best = box[1] - pos[0]
    if pos[1] - box[2] < best:
        best = pos[1] - box[2]
    if box[3] - pos[1] < best:
        best = box[3] - pos[1]
    if pos[2] - box[4] < best:
        best = pos[2] - box[4]
    if box[5] - pos[2] < best:
        best = box[5] - pos[2]
    return best


@njit(cache=True)
def spring_pass(R, o, vsp, f_ext, spr_body, spr_pts, spr_kd, spr_active):
    """Zero-rest-length point-to-point springs; body index -1 = world."""
    pa = np.empty(3)
    va = np.empty(3)
    pb = np.empty(3)
    vb = np.empty(3)
    F = np.empty(3)
    for s in range(spr_body.shape[0]):
        if spr_active[s] < 0.5:
            continue
        a = spr_body[s, 0]
        b = spr_body[s, 1]
        site_world(R, o, a, spr_pts[s, 0], pa, va, vsp)
        if b >= 0:
            site_world(R, o, b, spr_pts[s, 1], pb, vb, vsp)
        else:
            for k in range(3):
                pb[k] = spr_pts[s, 1, k]
                vb[k] = 0.0
        k_s = spr_kd[s, 0]
        d_s = spr_kd[s, 1]
        for k in range(3):
            F[k] = -k_s * (pa[k] - pb[k]) - d_s * (va[k] - vb[k])
        _apply_world_force(a, pa, F, R, o, f_ext)
        if b >= 0:
            for k in range(3):
                F[k] = -F[k]
            _apply_world_force(b, pb, F, R, o, f_ext)


@njit(cache=True)
def aux_forces(q, v, tau_eff, qidx, vidx, jtype,
               gear_body, gear_par, drag_body, drag_coef,
               limlo, limhi, limcap, lim_par, jdamp, R, o, vsp, f_ext, nb):
    """Gear couplings, linear drags, joint limits, passive joint damping."""
    for g in range(gear_body.shape[0]):
        bi = gear_body[g, 0]
        bj = gear_body[g, 1]
        ratio = gear_par[g, 0]
        kc = gear_par[g, 1]
        dc = gear_par[g, 2]
        th_i = q[qidx[bi]]
        th_j = q[qidx[bj]]
        w_i = v[vidx[bi]]
        w_j = v[vidx[bj]]
        tj = kc * (ratio * th_i - th_j) + dc * (ratio * w_i - w_j)
        tau_eff[vidx[bj]] += tj
        tau_eff[vidx[bi]] -= ratio * tj
    vw = np.empty(3)
    F = np.empty(3)
    for d in range(drag_body.shape[0]):
        b = drag_body[d]
        _mat_vec(R[b], vsp[b, 3:6], vw)
        for k in range(3):
            F[k] = -drag_coef[d, k] * vw[k]
        _apply_world_force(b, o[b], F, R, o, f_ext)
    lk = lim_par[0]
    lw = lim_par[1]
    for i in range(nb):
        if jtype[i] != JT_REVOLUTE:
            continue
        vi = vidx[i]
        th = q[qidx[i]]
        thd = v[vi]
        tau_eff[vi] -= jdamp[i] * thd
        lo = limlo[i]
        hi = limhi[i]
        lmax = limcap[i]
        e1 = (lo - th) / lw
        e2 = (th - hi) / lw
        t = 0.0
        if e1 > -30.0:
            t += lk * np.exp(min(e1, 12.0))
        if e2 > -30.0:
            t -= lk * np.exp(min(e2, 12.0))
        if t > lmax:
            t = lmax
        elif t < -lmax:
            t = -lmax
        if th < lo or th > hi:
            # light bleed of the approach rate, scaled to the joint's size
            t -= (lmax / 60.0) * thd
        tau_eff[vi] += t


# ------------------------------------------------------ articulated body

@njit(cache=True)
def aba_pass(q, v, tau_eff, f_ext, parent, jtype, axis, anchor, qidx, vidx,
             Isp, R, o, E_up, vsp, g, qdd,
             IA, pA, Uw, dval, ubias, cbias, ahat):
    """Articulated-body forward dynamics; fills qdd (nv)."""
    nb = parent.shape[0]
    tmp6 = np.empty(6)
    X = np.empty((6, 6))
    # init and velocity bias
    for i in range(nb):
        for a in range(6):
            s = 0.0
            for b in range(6):
                IA[i, a, b] = Isp[i, a, b]
                s += Isp[i, a, b] * vsp[i, b]
            tmp6[a] = s
        _crf_apply(vsp[i], tmp6, pA[i])
        for a in range(6):
            pA[i, a] -= f_ext[i, a]
        if jtype[i] == JT_REVOLUTE:
            # c = v x (S qd): S = [u; 0]
            qd = v[vidx[i]]
            sa = np.empty(3)
            for k in range(3):
                sa[k] = axis[i, k] * qd
            _cross(vsp[i, 0:3], sa, cbias[i, 0:3])
            _cross(vsp[i, 3:6], sa, cbias[i, 3:6])
        else:
            for k in range(6):
                cbias[i, k] = 0.0
    # inward
    for i in range(nb - 1, -1, -1):
        if jtype[i] != JT_REVOLUTE:
            continue
        u_ax = axis[i]
        for a in range(6):
            s = 0.0
            for k in range(3):
                s += IA[i, a, k] * u_ax[k]
            Uw[i, a] = s
        d = Uw[i, 0] * u_ax[0] + Uw[i, 1] * u_ax[1] + Uw[i, 2] * u_ax[2]
        dval[i] = d
        ub = tau_eff[vidx[i]] - (pA[i, 0] * u_ax[0] + pA[i, 1] * u_ax[1]
                                 + pA[i, 2] * u_ax[2])
        ubias[i] = ub
        p = parent[i]
        if p >= 0:
            _xmat(E_up[i], anchor[i], X)
            # Ia = IA - U U^T / d ; pa = pA + Ia c + U ub/d
            for a in range(6):
                s = 0.0
                for b in range(6):
                    Iab = IA[i, a, b] - Uw[i, a] * Uw[i, b] / d
                    s += Iab * cbias[i, b]
                tmp6[a] = pA[i, a] + s + Uw[i, a] * ub / d
            # pA[p] += X^T pa
            for a in range(6):
                s = 0.0
                for b in range(6):
                    s += X[b, a] * tmp6[b]
                pA[p, a] += s
            # IA[p] += X^T Ia X, in two explicit steps
            IaX = np.empty((6, 6))
            for r_ in range(6):
                for cc in range(6):
                    s = 0.0
                    for k in range(6):
                        Ir = IA[i, r_, k] - Uw[i, r_] * Uw[i, k] / d
                        s += Ir * X[k, cc]
                    IaX[r_, cc] = s
            for a in range(6):
                for b in range(6):
                    s = 0.0
                    for k in range(6):
                        s += X[k, a] * IaX[k, b]
                    IA[p, a, b] += s
    # outward accelerations in gravity-offset space
    ghat = np.empty(6)
    for k in range(6):
        ghat[k] = 0.0
    ghat[5] = g          # minus gravity field: upward
    ap = np.empty(6)
    for i in range(nb):
        p = parent[i]
        if jtype[i] == JT_FREE:
            A = np.empty((6, 6))
            bvec = np.empty(6)
            for a in range(6):
                bvec[a] = -pA[i, a]
                for b in range(6):
                    A[a, b] = IA[i, a, b]
            sol = np.linalg.solve(A, bvec)
            for k in range(6):
                ahat[i, k] = sol[k]
            vi = vidx[i]
            for k in range(3):
                qdd[vi + k] = sol[k]
            # true linear acceleration components add rotated gravity
            gx = R[i, 2, 0] * (-g)
            gy = R[i, 2, 1] * (-g)
            gz = R[i, 2, 2] * (-g)
            qdd[vi + 3] = sol[3] + gx
            qdd[vi + 4] = sol[4] + gy
            qdd[vi + 5] = sol[5] + gz
        else:
            if p < 0:
                _xform_motion(E_up[i], anchor[i], ghat, ap)
            else:
                _xform_motion(E_up[i], anchor[i], ahat[p], ap)
            for k in range(6):
                ap[k] += cbias[i, k]
            u_ax = axis[i]
            num = ubias[i]
            for k in range(6):
                num -= Uw[i, k] * ap[k]
            qddi = num / dval[i]
            qdd[vidx[i]] = qddi
            for k in range(6):
                ahat[i, k] = ap[k]
            for k in range(3):
                ahat[i, k] += u_ax[k] * qddi


# ------------------------------------------------------------ derivative

@njit(cache=True)
def deriv(y, tau_app, nq, nv, parent, jtype, axis, anchor, qidx, vidx, Isp,
          limlo, limhi, limcap, lim_par, jdamp, g,
          site_body, site_local, site_dscale, anch,
          wheel_body, wheel_center, wheel_axis, wheel_radius,
          ground_par, mats, boxes, sb_par,
          spr_body, spr_pts, spr_kd, spr_active,
          gear_body, gear_par, drag_body, drag_coef,
          R, o, E_up, vsp, f_ext, IA, pA, Uw, dval, ubias, cbias, ahat,
          report, ydot):
    nb = parent.shape[0]
    q = y[0:nq]
    v = y[nq:nq + nv]
    aux = y[nq + nv:]
    fk_pass(q, v, parent, jtype, axis, anchor, qidx, vidx, R, o, E_up, vsp)
    for i in range(nb):
        for k in range(6):
            f_ext[i, k] = 0.0
    tau_eff = np.empty(nv)
    for k in range(nv):
        tau_eff[k] = tau_app[k]
    board_load = contact_pass(q, v, aux, R, o, vsp, f_ext,
                              site_body, site_local, site_dscale, anch,
                              wheel_body, wheel_center, wheel_axis,
                              wheel_radius, ground_par, mats, boxes, sb_par,
                              report)
    spring_pass(R, o, vsp, f_ext, spr_body, spr_pts, spr_kd, spr_active)
    aux_forces(q, v, tau_eff, qidx, vidx, jtype, gear_body, gear_par,
               drag_body, drag_coef, limlo, limhi, limcap, lim_par, jdamp,
               R, o, vsp, f_ext, nb)
    qdd = ydot[nq:nq + nv]
    aba_pass(q, v, tau_eff, f_ext, parent, jtype, axis, anchor, qidx, vidx,
             Isp, R, o, E_up, vsp, g, qdd,
             IA, pA, Uw, dval, ubias, cbias, ahat)
    # position derivatives
    for i in range(nb):
        if jtype[i] == JT_FREE:
            qi = qidx[i]
            vi = vidx[i]
            # rdot = R vO
            for a in range(3):
                s = 0.0
                for b in range(3):
                    s += R[i, a, b] * v[vi + 3 + b]
                ydot[qi + a] = s
            # quaternion rate: 0.5 * Q ⊗ (0, omega)
            w0 = y[qi + 3]
            x0 = y[qi + 4]
            y0 = y[qi + 5]
            z0 = y[qi + 6]
            wx = v[vi + 0]
            wy = v[vi + 1]
            wz = v[vi + 2]
            ydot[qi + 3] = 0.5 * (-x0 * wx - y0 * wy - z0 * wz)
            ydot[qi + 4] = 0.5 * (w0 * wx + y0 * wz - z0 * wy)
            ydot[qi + 5] = 0.5 * (w0 * wy + z0 * wx - x0 * wz)
            ydot[qi + 6] = 0.5 * (w0 * wz + x0 * wy - y0 * wx)
        else:
            ydot[qidx[i]] = v[vidx[i]]
    # springboard state
    if sb_par[0] > 0.5:
        kb = sb_par[6]
        cb = sb_par[7]
        mb = sb_par[8]
        ydot[nq + nv] = aux[1]
        ydot[nq + nv + 1] = (-kb * aux[0] - cb * aux[1] - board_load) / mb


@njit(cache=True)
def rk4_step(y, tau_app, dt, nq, nv, parent, jtype, axis, anchor, qidx, vidx,
             Isp, limlo, limhi, limcap, lim_par, jdamp, g,
             site_body, site_local, site_dscale, anch,
             wheel_body, wheel_center, wheel_axis, wheel_radius,
             ground_par, mats, boxes, sb_par,
             spr_body, spr_pts, spr_kd, spr_active,
             gear_body, gear_par, drag_body, drag_coef,
             R, o, E_up, vsp, f_ext, IA, pA, Uw, dval, ubias, cbias, ahat,
             report, k1, k2, k3, k4, ytmp, ynew):
    n = y.shape[0]
    deriv(y, tau_app, nq, nv, parent, jtype, axis, anchor, qidx, vidx, Isp,
          limlo, limhi, limcap, lim_par, jdamp, g, site_body, site_local,
          site_dscale, anch,
          wheel_body, wheel_center, wheel_axis, wheel_radius,
          ground_par, mats, boxes, sb_par, spr_body, spr_pts, spr_kd,
          spr_active, gear_body, gear_par, drag_body, drag_coef,
          R, o, E_up, vsp, f_ext, IA, pA, Uw, dval, ubias, cbias, ahat,
          report, k1)
    for i in range(n):
        ytmp[i] = y[i] + 0.5 * dt * k1[i]
    deriv(ytmp, tau_app, nq, nv, parent, jtype, axis, anchor, qidx, vidx, Isp,
          limlo, limhi, limcap, lim_par, jdamp, g, site_body, site_local,
          site_dscale, anch,
          wheel_body, wheel_center, wheel_axis, wheel_radius,
          ground_par, mats, boxes, sb_par, spr_body, spr_pts, spr_kd,
          spr_active, gear_body, gear_par, drag_body, drag_coef,
          R, o, E_up, vsp, f_ext, IA, pA, Uw, dval, ubias, cbias, ahat,
          report, k2)
    for i in range(n):
        ytmp[i] = y[i] + 0.5 * dt * k2[i]
    deriv(ytmp, tau_app, nq, nv, parent, jtype, axis, anchor, qidx, vidx, Isp,
          limlo, limhi, limcap, lim_par, jdamp, g, site_body, site_local,
          site_dscale, anch,
          wheel_body, wheel_center, wheel_axis, wheel_radius,
          ground_par, mats, boxes, sb_par, spr_body, spr_pts, spr_kd,
          spr_active, gear_body, gear_par, drag_body, drag_coef,
          R, o, E_up, vsp, f_ext, IA, pA, Uw, dval, ubias, cbias, ahat,
          report, k3)
    for i in range(n):
        ytmp[i] = y[i] + dt * k3[i]
    deriv(ytmp, tau_app, nq, nv, parent, jtype, axis, anchor, qidx, vidx, Isp,
          limlo, limhi, limcap, lim_par, jdamp, g, site_body, site_local,
          site_dscale, anch,
          wheel_body, wheel_center, wheel_axis, wheel_radius,
          ground_par, mats, boxes, sb_par, spr_body, spr_pts, spr_kd,
          spr_active, gear_body, gear_par, drag_body, drag_coef,
          R, o, E_up, vsp, f_ext, IA, pA, Uw, dval, ubias, cbias, ahat,
          report, k4)
    for i in range(n):
        ynew[i] = y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    # renormalize root quaternions
    nb = parent.shape[0]
    for i in range(nb):
        if jtype[i] == JT_FREE:
            qi = qidx[i] + 3
            nrm = np.sqrt(ynew[qi] ** 2 + ynew[qi + 1] ** 2
                          + ynew[qi + 2] ** 2 + ynew[qi + 3] ** 2)
            for k in range(4):
                ynew[qi + k] /= nrm
