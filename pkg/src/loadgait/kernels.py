"""Numba kernels for the 2 kHz inner loop of the planar biped.

Generalized coordinates q = [x, z, pitch, left hip, left knee, right hip,
right knee]: pelvis position, torso pitch (CCW from vertical), and relative
joint angles. The torso extends upward from the pelvis; each leg is a thigh
and shank chain ending in a point foot. Ground is the line z = 0.

Dynamics: mass matrix assembled from per-link COM Jacobians
(M = sum m_i J_i^T J_i + I_i on the angular rows), velocity-product terms via
the links' centripetal accelerations, penalty ground contact with a smooth
Coulomb friction cap, joint-space PD with torque clamping, and one of four
force-coupled load subsystems. Integration is semi-implicit Euler: the load
advances on current-state forces, the biped solves M qdd = rhs, velocities
update before positions.

Load subsystems exchange forces only; `load_forces` computes the wrench on
the torso and the net force on the load as separate expressions so the
Newton-pair residual is a real runtime check. The slosh model drives its
internal state from the previous inner step's qdd (one-step lag; its
exchanged force has no qdd term, so the lag cannot feed back). The carry
pendulums DO exert qdd-proportional rod forces, and feeding those back
lagged is unstable, so their qdd-dependence is folded into the mass matrix
exactly: a massless rod transmits a purely radial force, which makes the
coupling a rank-1 apparent-inertia term per pendulum; the rod angular
acceleration is then evaluated after the solve from the true qdd.

Everything here is float64 and deterministic: no fastmath, no parallelism.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# --- biped parameter pack indices (bp vector) --------------------------------
BP_M_TORSO, BP_M_LTH, BP_M_LSH, BP_M_RTH, BP_M_RSH = 0, 1, 2, 3, 4
BP_L_TORSO, BP_L_LTH, BP_L_LSH, BP_L_RTH, BP_L_RSH = 5, 6, 7, 8, 9
BP_I_TORSO, BP_I_LTH, BP_I_LSH, BP_I_RTH, BP_I_RSH = 10, 11, 12, 13, 14
BP_DAMP = 15  # 15..18: joint damping lh, lk, rh, rk
BP_MU, BP_KC, BP_CC, BP_VSLIP = 19, 20, 21, 22
BP_G, BP_BOUND = 23, 24
BP_RIG_M, BP_RIG_X, BP_RIG_Z = 25, 26, 27
BP_SIZE = 28

# --- load kind codes ----------------------------------------------------------
LK_NONE, LK_TRAYBOX, LK_CART, LK_POLE, LK_JUG = 0, 1, 2, 3, 4
LP_SIZE = 12

# --- load_forces output slots --------------------------------------------------
LF_WFX, LF_WFZ, LF_WTAU = 0, 1, 2   # wrench on torso (force at point + torque about pelvis)
LF_FLX, LF_FLZ = 3, 4               # net exchanged force on the load
LF_A0, LF_A1, LF_A2, LF_A3 = 5, 6, 7, 8
LF_SIZE = 9

# --- run_steps output slots ----------------------------------------------------
OUT_TIME, OUT_DIVERGED = 0, 1
OUT_EXT_IX, OUT_EXT_IZ = 2, 3          # external impulse: feet + cart ground + push
OUT_LFOOT_N, OUT_LFOOT_SPD = 4, 5      # per-inner-step sums (divide by n for means)
OUT_RFOOT_N, OUT_RFOOT_SPD = 6, 7
OUT_TORQUE_SQ, OUT_PAIR_ERR = 8, 9     # sum of joint torque^2; max Newton-pair residual
OUT_SIZE = 10


@njit(cache=True)
def _fill_link_jacobians(q, qd, bp, J, pos, abias):
    """Per-link COM Jacobians (5,2,7), world positions (5,2), and centripetal
    accelerations (5,2): torso, left thigh, left shank, right thigh, right
    shank."""
    x, z, phi = q[0], q[1], q[2]
    cphi, sphi = np.cos(phi), np.sin(phi)
    J[:] = 0.0

    # torso COM: pelvis + half torso length along torso "up" u = (-sin, cos)
    ct = 0.5 * bp[BP_L_TORSO]
    w_t = qd[2]
    J[0, 0, 0] = 1.0
    J[0, 1, 1] = 1.0
    J[0, 0, 2] = -ct * cphi
    J[0, 1, 2] = -ct * sphi
    pos[0, 0] = x - ct * sphi
    pos[0, 1] = z + ct * cphi
    abias[0, 0] = ct * sphi * w_t * w_t
    abias[0, 1] = -ct * cphi * w_t * w_t

    # legs: link direction d(a) = (sin a, -cos a), d' = (cos a, sin a), d'' = -d
    for side in range(2):
        hip = 3 + 2 * side
        th_idx = 1 + 2 * side
        sh_idx = 2 + 2 * side
        lth = bp[BP_L_LTH + 2 * side]
        lsh = bp[BP_L_LSH + 2 * side]
        a_th = phi + q[hip]
        a_sh = a_th + q[hip + 1]
        w_th = qd[2] + qd[hip]
        w_sh = w_th + qd[hip + 1]
        s_th, c_th = np.sin(a_th), np.cos(a_th)
        s_sh, c_sh = np.sin(a_sh), np.cos(a_sh)
        cth = 0.5 * lth
        csh = 0.5 * lsh

        # thigh COM = pelvis + (lth/2) d(a_th)
        J[th_idx, 0, 0] = 1.0
        J[th_idx, 1, 1] = 1.0
        J[th_idx, 0, 2] = cth * c_th
        J[th_idx, 1, 2] = cth * s_th
        J[th_idx, 0, hip] = cth * c_th
        J[th_idx, 1, hip] = cth * s_th
        pos[th_idx, 0] = x + cth * s_th
        pos[th_idx, 1] = z - cth * c_th
        abias[th_idx, 0] = -cth * s_th * w_th * w_th
        abias[th_idx, 1] = cth * c_th * w_th * w_th

        # shank COM = pelvis + lth d(a_th) + (lsh/2) d(a_sh)
        J[sh_idx, 0, 0] = 1.0
        J[sh_idx, 1, 1] = 1.0
        jx = lth * c_th + csh * c_sh
        jz = lth * s_th + csh * s_sh
        J[sh_idx, 0, 2] = jx
        J[sh_idx, 1, 2] = jz
        J[sh_idx, 0, hip] = jx
        J[sh_idx, 1, hip] = jz
        J[sh_idx, 0, hip + 1] = csh * c_sh
        J[sh_idx, 1, hip + 1] = csh * s_sh
        pos[sh_idx, 0] = x + lth * s_th + csh * s_sh
        pos[sh_idx, 1] = z - lth * c_th - csh * c_sh
        abias[sh_idx, 0] = -lth * s_th * w_th * w_th - csh * s_sh * w_sh * w_sh
        abias[sh_idx, 1] = lth * c_th * w_th * w_th + csh * c_sh * w_sh * w_sh


@njit(cache=True)
def _assemble_mass_matrix(q, bp, J, M):
    """Fill M (7x7) from already-filled Jacobians J plus inertias and the
    rigid attached point mass."""
    M[:] = 0.0
    for b in range(5):
        m = bp[BP_M_TORSO + b]
        for i in range(7):
            jx, jz = J[b, 0, i], J[b, 1, i]
            if jx == 0.0 and jz == 0.0:
                continue
            for k in range(7):
                M[i, k] += m * (jx * J[b, 0, k] + jz * J[b, 1, k])
    M[2, 2] += bp[BP_I_TORSO]
    for side in range(2):
        hip = 3 + 2 * side
        knee = hip + 1
        i_th = bp[BP_I_LTH + 2 * side]
        i_sh = bp[BP_I_LSH + 2 * side]
        M[2, 2] += i_th + i_sh
        M[2, hip] += i_th + i_sh
        M[hip, 2] += i_th + i_sh
        M[hip, hip] += i_th + i_sh
        M[2, knee] += i_sh
        M[knee, 2] += i_sh
        M[hip, knee] += i_sh
        M[knee, hip] += i_sh
        M[knee, knee] += i_sh
    m_r = bp[BP_RIG_M]
    if m_r > 0.0:
        cphi, sphi = np.cos(q[2]), np.sin(q[2])
        rx = cphi * bp[BP_RIG_X] - sphi * bp[BP_RIG_Z]
        rz = sphi * bp[BP_RIG_X] + cphi * bp[BP_RIG_Z]
        # attached point Jacobian cols: x -> (1,0), z -> (0,1), phi -> (-rz, rx)
        M[0, 0] += m_r
        M[1, 1] += m_r
        M[0, 2] += m_r * (-rz)
        M[2, 0] += m_r * (-rz)
        M[1, 2] += m_r * rx
        M[2, 1] += m_r * rx
        M[2, 2] += m_r * (rx * rx + rz * rz)


@njit(cache=True)
def mass_matrix(q, bp):
    """7x7 generalized mass matrix at configuration q."""
    J = np.zeros((5, 2, 7))
    pos = np.zeros((5, 2))
    abias = np.zeros((5, 2))
    qd0 = np.zeros(7)
    M = np.zeros((7, 7))
    _fill_link_jacobians(q, qd0, bp, J, pos, abias)
    _assemble_mass_matrix(q, bp, J, M)
    return M


@njit(cache=True)
def foot_kinematics(q, qd, bp):
    """Foot point positions and velocities: (lx, lz, lvx, lvz, rx, rz, rvx, rvz)."""
    x, z, phi = q[0], q[1], q[2]
    out = np.empty(8)
    for side in range(2):
        hip = 3 + 2 * side
        lth = bp[BP_L_LTH + 2 * side]
        lsh = bp[BP_L_LSH + 2 * side]
        a_th = phi + q[hip]
        a_sh = a_th + q[hip + 1]
        w_th = qd[2] + qd[hip]
        w_sh = w_th + qd[hip + 1]
        s_th, c_th = np.sin(a_th), np.cos(a_th)
        s_sh, c_sh = np.sin(a_sh), np.cos(a_sh)
        out[4 * side + 0] = x + lth * s_th + lsh * s_sh
        out[4 * side + 1] = z - lth * c_th - lsh * c_sh
        out[4 * side + 2] = qd[0] + lth * c_th * w_th + lsh * c_sh * w_sh
        out[4 * side + 3] = qd[1] + lth * s_th * w_th + lsh * s_sh * w_sh
    return out


@njit(cache=True)
def foot_contact_forces(q, qd, bp):
    """Ground reaction per foot: (lN, lFt, rN, rFt) from the penalty model."""
    k_c, c_c = bp[BP_KC], bp[BP_CC]
    mu, v_slip = bp[BP_MU], bp[BP_VSLIP]
    fk = foot_kinematics(q, qd, bp)
    out = np.zeros(4)
    for side in range(2):
        fz = fk[4 * side + 1]
        fvx = fk[4 * side + 2]
        fvz = fk[4 * side + 3]
        if fz < 0.0:
            N = -k_c * fz - c_c * fvz
            if N < 0.0:
                N = 0.0
            out[2 * side] = N
            out[2 * side + 1] = -mu * N * np.tanh(fvx / v_slip)
    return out


@njit(cache=True)
def biped_momentum(q, qd, bp):
    """Linear momentum (px, pz) of the biped links + rigid attached mass."""
    J = np.zeros((5, 2, 7))
    pos = np.zeros((5, 2))
    abias = np.zeros((5, 2))
    _fill_link_jacobians(q, qd, bp, J, pos, abias)
    px, pz = 0.0, 0.0
    for b in range(5):
        m = bp[BP_M_TORSO + b]
        vx, vz = 0.0, 0.0
        for i in range(7):
            vx += J[b, 0, i] * qd[i]
            vz += J[b, 1, i] * qd[i]
        px += m * vx
        pz += m * vz
    m_r = bp[BP_RIG_M]
    if m_r > 0.0:
        cphi, sphi = np.cos(q[2]), np.sin(q[2])
        rx = cphi * bp[BP_RIG_X] - sphi * bp[BP_RIG_Z]
        rz = sphi * bp[BP_RIG_X] + cphi * bp[BP_RIG_Z]
        px += m_r * (qd[0] - qd[2] * rz)
        pz += m_r * (qd[1] + qd[2] * rx)
    return px, pz


@njit(cache=True)
def mechanical_energy(q, qd, bp):
    """Kinetic + gravitational potential energy of the biped (+ rigid mass)."""
    M = mass_matrix(q, bp)
    ke = 0.0
    for i in range(7):
        for k in range(7):
            ke += 0.5 * qd[i] * M[i, k] * qd[k]
    J = np.zeros((5, 2, 7))
    pos = np.zeros((5, 2))
    abias = np.zeros((5, 2))
    qd0 = np.zeros(7)
    _fill_link_jacobians(q, qd0, bp, J, pos, abias)
    g = bp[BP_G]
    pe = 0.0
    for b in range(5):
        pe += bp[BP_M_TORSO + b] * g * pos[b, 1]
    m_r = bp[BP_RIG_M]
    if m_r > 0.0:
        cphi, sphi = np.cos(q[2]), np.sin(q[2])
        rz = sphi * bp[BP_RIG_X] + cphi * bp[BP_RIG_Z]
        pe += m_r * g * (q[1] + rz)
    return ke + pe


@njit(cache=True)
def load_forces(q, qd, qdd, lq, lqd, kind, lp, bp):
    """Exchanged forces between torso and load from the CURRENT state.

    Returns an LF_SIZE vector: wrench on the torso (world force + torque
    about the pelvis), the net exchanged force on the load (Newton pair of
    the wrench force), and kind-specific integration auxiliaries:
      tray-box: box world state (x, z, vx, vz) before integration
      cart:     (cart acceleration, ground friction force, ground normal, 0)
      carry-pole: (rod angular acceleration fore, aft, 0, 0)
      water-jug:  (slosh acceleration x, z, 0, 0)

    The carry-pole forces depend on qdd; they are exact when the caller
    passes the accelerations actually realized this step (run_steps folds
    that dependence into its solve, and this closed form reproduces the
    forces it applied).
    """
    out = np.zeros(LF_SIZE)
    if kind == LK_NONE:
        return out
    x, z, phi = q[0], q[1], q[2]
    cphi, sphi = np.cos(phi), np.sin(phi)
    g = bp[BP_G]

    if kind == LK_TRAYBOX:
        m_b = lp[0]
        halfw = lp[1]
        mu_bt = lp[2]
        mx, mz = lp[3], lp[4]
        k_c, c_c = bp[BP_KC], bp[BP_CC]
        v_slip = bp[BP_VSLIP]
        # tray origin and axes: tangent (c, s), normal (-s, c)
        ox = x + cphi * mx - sphi * mz
        oz = z + sphi * mx + cphi * mz
        vox = qd[0] + qd[2] * (-sphi * mx - cphi * mz)
        voz = qd[1] + qd[2] * (cphi * mx - sphi * mz)
        sR, nR = lq[0], lq[1]
        dsR, dnR = lqd[0], lqd[1]
        rwx = cphi * sR - sphi * nR
        rwz = sphi * sR + cphi * nR
        box_x = ox + rwx
        box_z = oz + rwz
        box_vx = vox - qd[2] * rwz + cphi * dsR - sphi * dnR
        box_vz = voz + qd[2] * rwx + sphi * dsR + cphi * dnR
        N_b = 0.0
        Ft_b = 0.0
        # support only within the tray extent; box slides under friction
        if nR < 0.0 and -halfw <= sR <= halfw:
            N_b = -k_c * nR - c_c * dnR
            if N_b < 0.0:
                N_b = 0.0
            Ft_b = -mu_bt * N_b * np.tanh(dsR / v_slip)
        # force on the box from the tray, in world axes
        flx = Ft_b * cphi - N_b * sphi
        flz = Ft_b * sphi + N_b * cphi
        out[LF_FLX] = flx
        out[LF_FLZ] = flz
        # reaction on the torso acts at the box contact point
        out[LF_WFX] = -(Ft_b * cphi - N_b * sphi)
        out[LF_WFZ] = -(Ft_b * sphi + N_b * cphi)
        out[LF_WTAU] = (box_x - x) * out[LF_WFZ] - (box_z - z) * out[LF_WFX]
        out[LF_A0] = box_x
        out[LF_A1] = box_z
        out[LF_A2] = box_vx
        out[LF_A3] = box_vz
        return out

    if kind == LK_CART:
        m_c = lp[0]
        rest = lp[1]
        mu_cg = lp[2]
        k_r = lp[3]
        c_r = lp[4]
        v_slip = bp[BP_VSLIP]
        xc = lq[0]
        vc = lqd[0]
        dx = xc - x
        dz = 0.0 - z
        dist = np.sqrt(dx * dx + dz * dz)
        T = 0.0
        ux, uz = 0.0, 0.0
        if dist > 1.0e-9:
            ux, uz = dx / dist, dz / dist
            if dist > rest:
                # taut: stiff unilateral spring-damper, tension only
                dlen = (vc - qd[0]) * ux + (0.0 - qd[1]) * uz
                T = k_r * (dist - rest) + c_r * dlen
                if T < 0.0:
                    T = 0.0
        # rope pulls the pelvis toward the cart...
        out[LF_WFX] = T * ux
        out[LF_WFZ] = T * uz
        out[LF_WTAU] = 0.0  # attached at the pelvis itself
        # ...and the cart toward the pelvis
        out[LF_FLX] = -T * ux
        out[LF_FLZ] = -T * uz
        N_c = m_c * g + T * uz  # upward rope pull unloads the wheels
        if N_c < 0.0:
            N_c = 0.0
        Ff = -mu_cg * N_c * np.tanh(vc / v_slip)
        out[LF_A0] = (out[LF_FLX] + Ff) / m_c
        out[LF_A1] = Ff
        out[LF_A2] = N_c
        return out

    if kind == LK_POLE:
        m_s = lp[0]
        L = lp[1]
        w2 = qd[2] * qd[2]
        wfx, wfz, wtau = 0.0, 0.0, 0.0
        flx, flz = 0.0, 0.0
        for pend in range(2):
            offx = lp[2 + 2 * pend]
            offz = lp[3 + 2 * pend]
            th = lq[pend]
            w = lqd[pend]
            rx = cphi * offx - sphi * offz
            rz = sphi * offx + cphi * offz
            # pivot acceleration from the previous step's qdd (one-step lag)
            apx = qdd[0] - qdd[2] * rz - w2 * rx
            apz = qdd[1] + qdd[2] * rx - w2 * rz
            s_t, c_t = np.sin(th), np.cos(th)
            thdd = (-g * s_t - (apx * c_t + apz * s_t)) / L
            # rod force on the hanging mass (massless rod)
            abx = apx + L * thdd * c_t - L * w * w * s_t
            abz = apz + L * thdd * s_t + L * w * w * c_t
            frx = m_s * abx
            frz = m_s * (abz + g)
            flx += frx
            flz += frz
            wfx -= frx
            wfz -= frz
            wtau += rx * (-frz) - rz * (-frx)
            if pend == 0:
                out[LF_A0] = thdd
            else:
                out[LF_A1] = thdd
        out[LF_WFX] = wfx
        out[LF_WFZ] = wfz
        out[LF_WTAU] = wtau
        out[LF_FLX] = flx
        out[LF_FLZ] = flz
        return out

    # LK_JUG: equilibrium-relative slosh analog; gravity lives in the
    # equilibrium offset, so a resting jug exchanges exactly zero force.
    m_s = lp[0]
    kx, kz = lp[1], lp[2]
    cx, cz = lp[3], lp[4]
    travel = lp[5]
    k_stop = lp[6]
    mx, mz = lp[7], lp[8]
    rx = cphi * mx - sphi * mz
    rz = sphi * mx + cphi * mz
    w2 = qd[2] * qd[2]
    apx = qdd[0] - qdd[2] * rz - w2 * rx
    apz = qdd[1] + qdd[2] * rx - w2 * rz
    dxq, dzq = lq[0], lq[1]
    vdx, vdz = lqd[0], lqd[1]
    fsx = -kx * dxq - cx * vdx
    fsz = -kz * dzq - cz * vdz
    if dxq > travel:
        fsx -= k_stop * (dxq - travel)
    elif dxq < -travel:
        fsx -= k_stop * (dxq + travel)
    if dzq > travel:
        fsz -= k_stop * (dzq - travel)
    elif dzq < -travel:
        fsz -= k_stop * (dzq + travel)
    out[LF_FLX] = fsx
    out[LF_FLZ] = fsz
    out[LF_WFX] = -fsx
    out[LF_WFZ] = -fsz
    out[LF_WTAU] = rx * (-fsz) - rz * (-fsx)
    out[LF_A0] = fsx / m_s - apx
    out[LF_A1] = fsz / m_s - apz
    return out


@njit(cache=True)
def advance_load(lq, lqd, kind, lp, lf, dt):
    """Semi-implicit advance of the load's own coordinates using load_forces
    output `lf`. Tray-box is handled separately (world integration + frame
    conversion straddles the biped update)."""
    if kind == LK_CART:
        lqd[0] += dt * lf[LF_A0]
        lq[0] += dt * lqd[0]
    elif kind == LK_POLE:
        lqd[0] += dt * lf[LF_A0]
        lqd[1] += dt * lf[LF_A1]
        lq[0] += dt * lqd[0]
        lq[1] += dt * lqd[1]
    elif kind == LK_JUG:
        lqd[0] += dt * lf[LF_A0]
        lqd[1] += dt * lf[LF_A1]
        lq[0] += dt * lqd[0]
        lq[1] += dt * lqd[1]


@njit(cache=True)
def run_steps(q, qd, qdd, lq, lqd, kind, lp, bp, kp, kd, tau_lim, setp,
              setp0, t, push_fx, push_fz, push_until, dt, n_steps, pinned):
    """Advance the coupled biped + load system n_steps inner steps in place.

    PD setpoints ramp linearly from `setp0` to `setp` across the window
    (first-order hold); passing setp0 == setp gives a plain held setpoint.
    Mutates q, qd, qdd, lq, lqd. Returns an OUT_SIZE vector: final time,
    divergence flag, external-impulse accumulators, per-foot force/speed
    sums, summed squared torques, and the worst Newton-pair residual.
    """
    out = np.zeros(OUT_SIZE)
    J = np.zeros((5, 2, 7))
    pos = np.zeros((5, 2))
    abias = np.zeros((5, 2))
    M = np.zeros((7, 7))
    rhs = np.zeros(7)
    g = bp[BP_G]
    mu = bp[BP_MU]
    k_c = bp[BP_KC]
    c_c = bp[BP_CC]
    v_slip = bp[BP_VSLIP]
    bound = bp[BP_BOUND]
    m_b = lp[0] if kind == LK_TRAYBOX else 0.0
    diverged = False

    for i_step in range(n_steps):
        x, z, phi = q[0], q[1], q[2]
        cphi, sphi = np.cos(phi), np.sin(phi)
        frac = (i_step + 1.0) / n_steps
        _fill_link_jacobians(q, qd, bp, J, pos, abias)
        _assemble_mass_matrix(q, bp, J, M)

        # gravity and velocity-product generalized forces
        rhs[:] = 0.0
        for b in range(5):
            m = bp[BP_M_TORSO + b]
            fx = -m * abias[b, 0]
            fz = -m * (g + abias[b, 1])
            for i in range(7):
                rhs[i] += J[b, 0, i] * fx + J[b, 1, i] * fz
        m_r = bp[BP_RIG_M]
        if m_r > 0.0:
            rx = cphi * bp[BP_RIG_X] - sphi * bp[BP_RIG_Z]
            rz = sphi * bp[BP_RIG_X] + cphi * bp[BP_RIG_Z]
            w2 = qd[2] * qd[2]
            fx = m_r * w2 * rx          # minus centripetal accel times mass
            fz = -m_r * (g - w2 * rz)
            rhs[0] += fx
            rhs[1] += fz
            rhs[2] += (-rz) * fx + rx * fz

        # PD torques (clamped) and joint damping
        tsq = 0.0
        for j in range(4):
            sp = setp0[j] + (setp[j] - setp0[j]) * frac
            tau = kp[j] * (sp - q[3 + j]) - kd[j] * qd[3 + j]
            if tau > tau_lim:
                tau = tau_lim
            elif tau < -tau_lim:
                tau = -tau_lim
            tsq += tau * tau
            rhs[3 + j] += tau - bp[BP_DAMP + j] * qd[3 + j]
        out[OUT_TORQUE_SQ] += tsq

        # ground contact at the point feet
        for side in range(2):
            hip = 3 + 2 * side
            lth = bp[BP_L_LTH + 2 * side]
            lsh = bp[BP_L_LSH + 2 * side]
            a_th = phi + q[hip]
            a_sh = a_th + q[hip + 1]
            w_th = qd[2] + qd[hip]
            w_sh = w_th + qd[hip + 1]
            s_th, c_th = np.sin(a_th), np.cos(a_th)
            s_sh, c_sh = np.sin(a_sh), np.cos(a_sh)
            fz_pos = z - lth * c_th - lsh * c_sh
            fvx = qd[0] + lth * c_th * w_th + lsh * c_sh * w_sh
            fvz = qd[1] + lth * s_th * w_th + lsh * s_sh * w_sh
            spd = np.sqrt(fvx * fvx + fvz * fvz)
            N = 0.0
            Ft = 0.0
            if fz_pos < 0.0:
                N = -k_c * fz_pos - c_c * fvz
                if N < 0.0:
                    N = 0.0
                Ft = -mu * N * np.tanh(fvx / v_slip)
            if side == 0:
                out[OUT_LFOOT_N] += N
                out[OUT_LFOOT_SPD] += spd
            else:
                out[OUT_RFOOT_N] += N
                out[OUT_RFOOT_SPD] += spd
            if N != 0.0 or Ft != 0.0:
                jphi_x = lth * c_th + lsh * c_sh
                jphi_z = lth * s_th + lsh * s_sh
                dot_phi = jphi_x * Ft + jphi_z * N
                rhs[0] += Ft
                rhs[1] += N
                rhs[2] += dot_phi
                rhs[hip] += dot_phi
                rhs[hip + 1] += (lsh * c_sh) * Ft + (lsh * s_sh) * N
                out[OUT_EXT_IX] += Ft * dt
                out[OUT_EXT_IZ] += N * dt

        # external push at the pelvis
        if t < push_until:
            rhs[0] += push_fx
            rhs[1] += push_fz
            out[OUT_EXT_IX] += push_fx * dt
            out[OUT_EXT_IZ] += push_fz * dt

        # load coupling
        box_x, box_z, box_vx, box_vz = 0.0, 0.0, 0.0, 0.0
        if kind == LK_POLE:
            # Massless rods transmit purely radial force, so the
            # qdd-dependent part of the coupling is exact apparent inertia:
            # M += m (A^T r)(A^T r)^T per pendulum, where A maps base
            # accelerations to the pivot and r is the unit rod direction.
            # Only the velocity/gravity remainder enters the force side.
            m_s = lp[0]
            Lp = lp[1]
            w2p = qd[2] * qd[2]
            for pend in range(2):
                offx = lp[2 + 2 * pend]
                offz = lp[3 + 2 * pend]
                rx = cphi * offx - sphi * offz
                rz = sphi * offx + cphi * offz
                th = lq[pend]
                w = lqd[pend]
                s_t, c_t = np.sin(th), np.cos(th)
                cpx = -w2p * rx                  # pivot centripetal accel
                cpz = -w2p * rz
                rdotc = s_t * cpx - c_t * cpz    # radial part of it
                f0x = m_s * (rdotc * s_t - g * s_t * c_t - Lp * w * w * s_t)
                f0z = m_s * (-rdotc * c_t - g * s_t * s_t + Lp * w * w * c_t + g)
                rhs[0] -= f0x
                rhs[1] -= f0z
                rhs[2] -= (-rz) * f0x + rx * f0z
                v2 = -rz * s_t - rx * c_t
                M[0, 0] += m_s * s_t * s_t
                M[1, 1] += m_s * c_t * c_t
                a01 = -m_s * s_t * c_t
                M[0, 1] += a01
                M[1, 0] += a01
                a02 = m_s * s_t * v2
                M[0, 2] += a02
                M[2, 0] += a02
                a12 = -m_s * c_t * v2
                M[1, 2] += a12
                M[2, 1] += a12
                M[2, 2] += m_s * v2 * v2
        elif kind != LK_NONE:
            lf = load_forces(q, qd, qdd, lq, lqd, kind, lp, bp)
            rhs[0] += lf[LF_WFX]
            rhs[1] += lf[LF_WFZ]
            rhs[2] += lf[LF_WTAU]
            pair = abs(lf[LF_WFX] + lf[LF_FLX]) + abs(lf[LF_WFZ] + lf[LF_FLZ])
            if pair > out[OUT_PAIR_ERR]:
                out[OUT_PAIR_ERR] = pair
            if kind == LK_TRAYBOX:
                # integrate the box in world coordinates
                box_vx = lf[LF_A2] + dt * (lf[LF_FLX] / m_b)
                box_vz = lf[LF_A3] + dt * (lf[LF_FLZ] / m_b - g)
                box_x = lf[LF_A0] + dt * box_vx
                box_z = lf[LF_A1] + dt * box_vz
            elif kind == LK_CART:
                advance_load(lq, lqd, kind, lp, lf, dt)
                out[OUT_EXT_IX] += lf[LF_A1] * dt  # cart ground friction
                out[OUT_EXT_IZ] += lf[LF_A2] * dt  # cart ground normal
            else:
                advance_load(lq, lqd, kind, lp, lf, dt)

        # solve M qdd = rhs and integrate (semi-implicit)
        if pinned:
            Msub = np.empty((4, 4))
            rsub = np.empty(4)
            for i in range(4):
                rsub[i] = rhs[3 + i]
                for k in range(4):
                    Msub[i, k] = M[3 + i, 3 + k]
            qdd_j = np.linalg.solve(Msub, rsub)
            qdd[0] = 0.0
            qdd[1] = 0.0
            qdd[2] = 0.0
            for i in range(4):
                qdd[3 + i] = qdd_j[i]
        else:
            qdd[:] = np.linalg.solve(M, rhs)

        # carry-pole: rod accelerations from the true qdd, pre-step geometry
        if kind == LK_POLE:
            Lp = lp[1]
            w2p = qd[2] * qd[2]
            for pend in range(2):
                offx = lp[2 + 2 * pend]
                offz = lp[3 + 2 * pend]
                rx = cphi * offx - sphi * offz
                rz = sphi * offx + cphi * offz
                th = lq[pend]
                s_t, c_t = np.sin(th), np.cos(th)
                apx = qdd[0] - qdd[2] * rz - w2p * rx
                apz = qdd[1] + qdd[2] * rx - w2p * rz
                thdd = (-g * s_t - (apx * c_t + apz * s_t)) / Lp
                lqd[pend] += dt * thdd
                lq[pend] += dt * lqd[pend]

        for i in range(7):
            qd[i] += dt * qdd[i]
            q[i] += dt * qd[i]
        t += dt

        # tray-box: express the box in the new tray frame
        if kind == LK_TRAYBOX:
            mx, mz = lp[3], lp[4]
            c2, s2 = np.cos(q[2]), np.sin(q[2])
            ox = q[0] + c2 * mx - s2 * mz
            oz = q[1] + s2 * mx + c2 * mz
            vox = qd[0] + qd[2] * (-s2 * mx - c2 * mz)
            voz = qd[1] + qd[2] * (c2 * mx - s2 * mz)
            relx = box_x - ox
            relz = box_z - oz
            lq[0] = c2 * relx + s2 * relz
            lq[1] = -s2 * relx + c2 * relz
            vrx = box_vx - vox + qd[2] * relz
            vrz = box_vz - voz - qd[2] * relx
            lqd[0] = c2 * vrx + s2 * vrz
            lqd[1] = -s2 * vrx + c2 * vrz

        # divergence check (the comparisons also catch NaN)
        ok = True
        for i in range(7):
            if not (abs(q[i]) < bound) or not (abs(qd[i]) < bound):
                ok = False
        for i in range(2):
            if not (abs(lq[i]) < bound) or not (abs(lqd[i]) < bound):
                ok = False
        if not ok:
            diverged = True
            break

    out[OUT_TIME] = t
    out[OUT_DIVERGED] = 1.0 if diverged else 0.0
    return out
