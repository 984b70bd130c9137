"""Pure-numpy batched physics kernel.

Mirrors ``_physics_ext.pyx`` operation for operation so both backends agree
to rounding. Every function works on ``N`` robots at once.
"""
import numpy as np

from ._layout import (
    C_NORMAL, C_PEN, C_TANGENT, DTH, OMEGA, P_CN, P_CT, P_G, P_HI, P_HIP,
    P_IJOINT, P_INERTIA, P_JDAMP, P_JET, P_KD, P_KN, P_KP, P_L1, P_L2, P_LO,
    P_MASS, P_MU, P_TAU_LIM, PHI, TH, THRUST, VX, VZ, X, Z,
)

BACKEND = "python"


def terrain_heights(x, samples, count, origin, spacing, left, right):
    """Linearly interpolated terrain height under each ``x`` (one field per row)."""
    u = (x - origin) / spacing
    last = count - 1
    i = np.floor(u)
    i = np.minimum(np.maximum(i, 0.0), (last - 1).astype(np.float64)).astype(np.intp)
    frac = u - i
    rows = np.arange(x.shape[0])
    h0 = samples[rows, i]
    h1 = samples[rows, i + 1]
    h = h0 + frac * (h1 - h0)
    h = np.where(u < 0.0, left, h)
    h = np.where(u > last, right, h)
    return h


def integrate(params, state, theta_d, terrain, dt, n_sub, contact_out):
    """Advance ``state`` (N, 16) in place by ``n_sub`` substeps of ``dt``.

    ``terrain`` is the packed tuple ``(samples, count, origin, spacing, left, right)``.
    ``contact_out`` (N, 2, 3) receives penetration / normal / tangential force of
    each foot at the last substep.
    """
    p = params
    m, inertia, g = p[P_MASS], p[P_INERTIA], p[P_G]
    l1, l2 = p[P_L1], p[P_L2]
    kn, cn, ct, mu = p[P_KN], p[P_CN], p[P_CT], p[P_MU]
    tau_lim, ij, jd = p[P_TAU_LIM], p[P_IJOINT], p[P_JDAMP]
    samples, count, origin, spacing, left, right = terrain
    half_dt2 = 0.5 * dt * dt

    for _ in range(n_sub):
        c = np.cos(state[:, PHI])
        s = np.sin(state[:, PHI])
        x, z = state[:, X], state[:, Z]
        vx, vz, om = state[:, VX], state[:, VZ], state[:, OMEGA]
        fx_tot = np.zeros(state.shape[0])
        fz_tot = np.zeros(state.shape[0])
        torque = np.zeros(state.shape[0])
        for leg in range(2):
            h = state[:, TH + 2 * leg]
            k = state[:, TH + 2 * leg + 1]
            dh = state[:, DTH + 2 * leg]
            dk = state[:, DTH + 2 * leg + 1]
            hk = h + k
            dhk = dh + dk
            sh, ch = np.sin(h), np.cos(h)
            shk, chk = np.sin(hk), np.cos(hk)
            fbx = p[P_HIP + 2 * leg] + l1 * sh + l2 * shk
            fbz = p[P_HIP + 2 * leg + 1] - l1 * ch - l2 * chk
            dfbx = l1 * ch * dh + l2 * chk * dhk
            dfbz = l1 * sh * dh + l2 * shk * dhk
            rx = c * fbx - s * fbz
            rz = s * fbx + c * fbz
            vfx = vx - om * rz + (c * dfbx - s * dfbz)
            vfz = vz + om * rx + (s * dfbx + c * dfbz)
            ground = terrain_heights(x + rx, samples, count, origin, spacing, left, right)
            pen = ground - (z + rz)
            touching = pen > 0.0
            normal = np.maximum(kn * pen - cn * vfz, 0.0)
            lim = mu * normal
            tang = np.minimum(np.maximum(-ct * vfx, -lim), lim)
            normal = np.where(touching, normal, 0.0)
            tang = np.where(touching, tang, 0.0)
            pen = np.where(touching, pen, 0.0)
            fx_tot = fx_tot + tang
            fz_tot = fz_tot + normal
            torque = torque + (rx * normal - rz * tang)
            contact_out[:, leg, C_PEN] = pen
            contact_out[:, leg, C_NORMAL] = normal
            contact_out[:, leg, C_TANGENT] = tang
        for jet in range(2):
            thrust = state[:, THRUST + jet]
            jfx = -s * thrust
            jfz = c * thrust
            jx, jz = p[P_JET + 2 * jet], p[P_JET + 2 * jet + 1]
            jrx = c * jx - s * jz
            jrz = s * jx + c * jz
            fx_tot = fx_tot + jfx
            fz_tot = fz_tot + jfz
            torque = torque + (jrx * jfz - jrz * jfx)
        ax = fx_tot / m
        az = fz_tot / m - g
        alpha = torque / inertia

        th = state[:, TH:TH + 4]
        dth = state[:, DTH:DTH + 4]
        kp = p[P_KP:P_KP + 4]
        kd = p[P_KD:P_KD + 4]
        tau = kp * (theta_d - th) - kd * dth
        tau = np.minimum(np.maximum(tau, -tau_lim), tau_lim)
        jacc = (tau - jd * dth) / ij

        state[:, VX] = vx + ax * dt
        state[:, VZ] = vz + az * dt
        state[:, OMEGA] = om + alpha * dt
        # positions use the constant-acceleration-exact rule (exact in flight)
        state[:, X] = x + state[:, VX] * dt - half_dt2 * ax
        state[:, Z] = z + state[:, VZ] * dt - half_dt2 * az
        state[:, PHI] = state[:, PHI] + state[:, OMEGA] * dt - half_dt2 * alpha

        new_dth = dth + jacc * dt
        new_th = th + new_dth * dt
        lo = p[P_LO:P_LO + 4]
        hi = p[P_HI:P_HI + 4]
        hit = (new_th > hi) | (new_th < lo)
        new_th = np.minimum(np.maximum(new_th, lo), hi)
        new_dth = np.where(hit, 0.0, new_dth)
        state[:, TH:TH + 4] = new_th
        state[:, DTH:DTH + 4] = new_dth
