# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batched physics kernel; same contract as ``_physics_py.integrate``."""
from libc.math cimport cos, sin, floor

BACKEND = "cython"

DEF X = 0
DEF Z = 1
DEF PHI = 2
DEF VX = 3
DEF VZ = 4
DEF OMEGA = 5
DEF TH = 6
DEF DTH = 10
DEF THRUST = 14

DEF P_MASS = 0
DEF P_INERTIA = 1
DEF P_G = 2
DEF P_L1 = 3
DEF P_L2 = 4
DEF P_HIP = 5
DEF P_JET = 9
DEF P_KP = 13
DEF P_KD = 17
DEF P_TAU_LIM = 21
DEF P_IJOINT = 22
DEF P_JDAMP = 23
DEF P_LO = 24
DEF P_HI = 28
DEF P_KN = 32
DEF P_CN = 33
DEF P_CT = 34
DEF P_MU = 35


cdef inline double _height(const double[:, ::1] samples, long row, long count,
                           double origin, double spacing, double left,
                           double right, double x) noexcept nogil:
    cdef double u = (x - origin) / spacing
    cdef long last = count - 1
    cdef double fi = floor(u)
    cdef long i
    cdef double frac, h0, h1
    if fi < 0.0:
        fi = 0.0
    if fi > <double>(last - 1):
        fi = <double>(last - 1)
    i = <long>fi
    frac = u - fi
    h0 = samples[row, i]
    h1 = samples[row, i + 1]
    if u < 0.0:
        return left
    if u > <double>last:
        return right
    return h0 + frac * (h1 - h0)


def terrain_heights(double[::1] x, const double[:, ::1] samples, const long[::1] count,
                    const double[::1] origin, const double[::1] spacing,
                    const double[::1] left, const double[::1] right):
    import numpy as np
    out = np.empty(x.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t n
    for n in range(x.shape[0]):
        o[n] = _height(samples, n, count[n], origin[n], spacing[n], left[n], right[n], x[n])
    return out


cdef void _advance(const double[::1] p, double[:, ::1] st, const double[:, ::1] theta_d,
                   const double[:, ::1] samples, const long[::1] count,
                   const double[::1] origin, const double[::1] spacing,
                   const double[::1] left, const double[::1] right,
                   double dt, int n_sub, double[:, :, ::1] cout,
                   Py_ssize_t start, Py_ssize_t stop) noexcept nogil:
    cdef double m = p[P_MASS], inertia = p[P_INERTIA], g = p[P_G]
    cdef double l1 = p[P_L1], l2 = p[P_L2]
    cdef double kn = p[P_KN], cn = p[P_CN], ct = p[P_CT], mu = p[P_MU]
    cdef double tau_lim = p[P_TAU_LIM], ij = p[P_IJOINT], jd = p[P_JDAMP]
    cdef double half_dt2 = 0.5 * dt * dt
    cdef Py_ssize_t n
    cdef int it, leg, jet, j
    cdef double c, s, x, z, vx, vz, om, fx_tot, fz_tot, torque
    cdef double h, k, dh, dk, hk, dhk, sh, ch, shk, chk, fbx, fbz, dfbx, dfbz
    cdef double rx, rz, vfx, vfz, ground, pen, normal, lim, tang
    cdef double thrust, jfx, jfz, jx, jz, jrx, jrz, ax, az, alpha
    cdef double tau, jacc, ndth, nth
    cdef double jaccs[4]

    for n in range(start, stop):
        for it in range(n_sub):
            c = cos(st[n, PHI])
            s = sin(st[n, PHI])
            x = st[n, X]
            z = st[n, Z]
            vx = st[n, VX]
            vz = st[n, VZ]
            om = st[n, OMEGA]
            fx_tot = 0.0
            fz_tot = 0.0
            torque = 0.0
            for leg in range(2):
                h = st[n, TH + 2 * leg]
                k = st[n, TH + 2 * leg + 1]
                dh = st[n, DTH + 2 * leg]
                dk = st[n, DTH + 2 * leg + 1]
                hk = h + k
                dhk = dh + dk
                sh = sin(h)
                ch = cos(h)
                shk = sin(hk)
                chk = cos(hk)
                fbx = p[P_HIP + 2 * leg] + l1 * sh + l2 * shk
                fbz = p[P_HIP + 2 * leg + 1] - l1 * ch - l2 * chk
                dfbx = l1 * ch * dh + l2 * chk * dhk
                dfbz = l1 * sh * dh + l2 * shk * dhk
                rx = c * fbx - s * fbz
                rz = s * fbx + c * fbz
                vfx = vx - om * rz + (c * dfbx - s * dfbz)
                vfz = vz + om * rx + (s * dfbx + c * dfbz)
                ground = _height(samples, n, count[n], origin[n], spacing[n],
                                 left[n], right[n], x + rx)
                pen = ground - (z + rz)
                if pen > 0.0:
                    normal = kn * pen - cn * vfz
                    if normal < 0.0:
                        normal = 0.0
                    lim = mu * normal
                    tang = -ct * vfx
                    if tang < -lim:
                        tang = -lim
                    if tang > lim:
                        tang = lim
                else:
                    pen = 0.0
                    normal = 0.0
                    tang = 0.0
                fx_tot = fx_tot + tang
                fz_tot = fz_tot + normal
                torque = torque + (rx * normal - rz * tang)
                cout[n, leg, 0] = pen
                cout[n, leg, 1] = normal
                cout[n, leg, 2] = tang
            for jet in range(2):
                thrust = st[n, THRUST + jet]
                jfx = -s * thrust
                jfz = c * thrust
                jx = p[P_JET + 2 * jet]
                jz = p[P_JET + 2 * jet + 1]
                jrx = c * jx - s * jz
                jrz = s * jx + c * jz
                fx_tot = fx_tot + jfx
                fz_tot = fz_tot + jfz
                torque = torque + (jrx * jfz - jrz * jfx)
            ax = fx_tot / m
            az = fz_tot / m - g
            alpha = torque / inertia

            for j in range(4):
                tau = p[P_KP + j] * (theta_d[n, j] - st[n, TH + j]) - p[P_KD + j] * st[n, DTH + j]
                if tau < -tau_lim:
                    tau = -tau_lim
                if tau > tau_lim:
                    tau = tau_lim
                jaccs[j] = (tau - jd * st[n, DTH + j]) / ij

            st[n, VX] = vx + ax * dt
            st[n, VZ] = vz + az * dt
            st[n, OMEGA] = om + alpha * dt
            st[n, X] = x + st[n, VX] * dt - half_dt2 * ax
            st[n, Z] = z + st[n, VZ] * dt - half_dt2 * az
            st[n, PHI] = st[n, PHI] + st[n, OMEGA] * dt - half_dt2 * alpha

            for j in range(4):
                ndth = st[n, DTH + j] + jaccs[j] * dt
                nth = st[n, TH + j] + ndth * dt
                if nth > p[P_HI + j] or nth < p[P_LO + j]:
                    ndth = 0.0
                    if nth < p[P_LO + j]:
                        nth = p[P_LO + j]
                    if nth > p[P_HI + j]:
                        nth = p[P_HI + j]
                st[n, TH + j] = nth
                st[n, DTH + j] = ndth


def integrate(const double[::1] params, double[:, ::1] state, const double[:, ::1] theta_d,
              terrain, double dt, int n_sub, double[:, :, ::1] contact_out,
              Py_ssize_t start=0, Py_ssize_t stop=-1):
    cdef const double[:, ::1] samples = terrain[0]
    cdef const long[::1] count = terrain[1]
    cdef const double[::1] origin = terrain[2]
    cdef const double[::1] spacing = terrain[3]
    cdef const double[::1] left = terrain[4]
    cdef const double[::1] right = terrain[5]
    if stop < 0:
        stop = state.shape[0]
    with nogil:
        _advance(params, state, theta_d, samples, count, origin, spacing, left,
                 right, dt, n_sub, contact_out, start, stop)
