# cython: boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled backend for the hot rollout loops.

Scalar-loop twin of `numpy_ref.py`; see that module's docstring for the
shared semantics (saturated feedback stepping, radius clamp with validity
flagging, tether-rate sync, and the reverse-mode adjoint of all of it).
"""

import numpy as np

cimport cython
from libc.math cimport fabs, fmod, sin, cos, tanh

NAME = "compiled"

STATE_CAP = 1e6  # |state| at or past this flags the rollout invalid

cdef double PI = 3.141592653589793
cdef double TWO_PI = 6.283185307179586
cdef double CAP = 1e6


cdef inline double wrap_pi(double a) noexcept nogil:
    cdef double w = fmod(a + PI, TWO_PI)
    if w != 0.0 and w < 0.0:
        w += TWO_PI
    w -= PI
    if w == -PI:
        w = PI
    return w


cdef inline void step_state(const double* x, const double* mu, const double* p,
                            const double* nz, double dt, double r_min,
                            double* xn) noexcept nogil:
    """One explicit Euler step with additive noise and the rate sync."""
    cdef double m = p[0], m_bar = p[1], M = p[2], M_l = p[3], g = p[4]
    cdef double c_theta = p[5], c_r = p[6], c_l = p[7], c_X = p[8]
    cdef double theta = x[0], r = x[1], om = x[4], vr = x[5], V = x[7]
    cdef double s, c, a_X, w_theta, w_r, eta_theta, eta_r, a_theta, a_r
    cdef int j
    if r < r_min:
        r = r_min
    s = sin(theta)
    c = cos(theta)
    a_X = (x[11] - c_X * V) / M
    w_theta = V * c + r * om
    w_r = V * s + vr
    eta_theta = c_theta * fabs(w_theta) * w_theta
    eta_r = c_r * fabs(w_r) * w_r
    a_theta = (m * a_X * c - 2.0 * m * vr * om - m_bar * g * s
               - eta_theta + x[8]) / (m * r)
    a_r = (m * a_X * s + m * r * om * om + m_bar * g * c
           - eta_r - c_l * vr + x[9] + x[10]) / (m + M_l)
    xn[0] = x[0] + dt * x[4] + nz[0]
    xn[1] = x[1] + dt * x[5] + nz[1]
    xn[2] = x[2] + dt * x[6] + nz[2]
    xn[3] = x[3] + dt * x[7] + nz[3]
    xn[4] = x[4] + dt * a_theta + nz[4]
    xn[5] = x[5] + dt * a_r + nz[5]
    xn[7] = x[7] + dt * a_X + nz[7]
    for j in range(4):
        xn[8 + j] = x[8 + j] + dt * (mu[j] - x[8 + j]) / p[9 + j] + nz[8 + j]
    xn[6] = xn[5]


def rollout_closed_loop(x0, uff, xnom, kp, kd, double u_max, params, noise,
                        double dt, double r_min):
    """Batched closed-loop rollout; same contract as the numpy twin."""
    cdef double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef double[:, ::1] uffv = np.ascontiguousarray(uff, dtype=np.float64)
    cdef double[:, ::1] xnomv = np.ascontiguousarray(xnom, dtype=np.float64)
    cdef double[:, ::1] kpv = np.ascontiguousarray(kp, dtype=np.float64)
    cdef double[:, ::1] kdv = np.ascontiguousarray(kd, dtype=np.float64)
    cdef double[:, ::1] pv = np.ascontiguousarray(params, dtype=np.float64)
    cdef double[:, :, ::1] nzv = np.ascontiguousarray(noise, dtype=np.float64)
    cdef Py_ssize_t N = pv.shape[0]
    cdef Py_ssize_t T = uffv.shape[0] - 1
    states_arr = np.empty((N, T + 1, 12))
    mu_arr = np.empty((N, T + 1, 4))
    valid_arr = np.ones(N, dtype=np.uint8)
    cdef double[:, :, ::1] st = states_arr
    cdef double[:, :, ::1] mu = mu_arr
    cdef unsigned char[::1] valid = valid_arr
    cdef Py_ssize_t i, k, j, q
    cdef double eq[4]
    cdef double ev[4]
    cdef double pre
    cdef double xn[12]
    if x0v[1] <= r_min:
        for i in range(N):
            valid[i] = 0
    with nogil:
        for i in range(N):
            for q in range(12):
                st[i, 0, q] = x0v[q]
            for k in range(T + 1):
                eq[0] = wrap_pi(xnomv[k, 0] - st[i, k, 0])
                for q in range(1, 4):
                    eq[q] = xnomv[k, q] - st[i, k, q]
                for q in range(4):
                    ev[q] = xnomv[k, 4 + q] - st[i, k, 4 + q]
                for j in range(4):
                    pre = uffv[k, j]
                    for q in range(4):
                        pre += eq[q] * kpv[j, q] + ev[q] * kdv[j, q]
                    mu[i, k, j] = u_max * tanh(pre / u_max)
                if k < T:
                    step_state(&st[i, k, 0], &mu[i, k, 0], &pv[i, 0],
                               &nzv[i, k, 0], dt, r_min, xn)
                    for q in range(12):
                        st[i, k + 1, q] = xn[q]
                        # negated < so NaN flags too (NaN comparisons are false)
                        if not (fabs(xn[q]) < CAP):
                            valid[i] = 0
                    if xn[1] <= r_min:
                        valid[i] = 0
    return states_arr, mu_arr, valid_arr.astype(bool)


cdef inline void accel_partials(const double* x, const double* p,
                                double r_min, double* out) noexcept nogil:
    """Sixteen partials, packed in the order documented in the numpy twin:
    [ath_th, ath_r, ath_om, ath_vr, ath_V, ath_fth, ath_fX,
     ar_th, ar_r, ar_om, ar_vr, ar_V, ar_fr, ar_fX, aX_V, aX_fX]."""
    cdef double m = p[0], m_bar = p[1], M = p[2], M_l = p[3], g = p[4]
    cdef double c_theta = p[5], c_r = p[6], c_l = p[7], c_X = p[8]
    cdef double theta = x[0], r_raw = x[1], om = x[4], vr = x[5], V = x[7]
    cdef double r = r_raw
    cdef double live = 1.0
    cdef double s, c, mm, a_X, w_theta, w_r, d_eth, d_er, eta_theta
    cdef double a_theta, daX_V
    if r < r_min:
        r = r_min
    if r_raw <= r_min:
        live = 0.0
    s = sin(theta)
    c = cos(theta)
    mm = m + M_l
    a_X = (x[11] - c_X * V) / M
    w_theta = V * c + r * om
    w_r = V * s + vr
    d_eth = 2.0 * c_theta * fabs(w_theta)
    d_er = 2.0 * c_r * fabs(w_r)
    eta_theta = c_theta * fabs(w_theta) * w_theta
    a_theta = (m * a_X * c - 2.0 * m * vr * om - m_bar * g * s
               - eta_theta + x[8]) / (m * r)
    daX_V = -c_X / M
    out[0] = (-m * a_X * s - m_bar * g * c + d_eth * V * s) / (m * r)
    out[1] = ((-d_eth * om) / (m * r) - a_theta / r) * live
    out[2] = (-2.0 * m * vr - d_eth * r) / (m * r)
    out[3] = -2.0 * om / r
    out[4] = (m * c * daX_V - d_eth * c) / (m * r)
    out[5] = 1.0 / (m * r)
    out[6] = c / (M * r)
    out[7] = (m * a_X * c - m_bar * g * s - d_er * V * c) / mm
    out[8] = (m * om * om / mm) * live
    out[9] = 2.0 * m * r * om / mm
    out[10] = (-d_er - c_l) / mm
    out[11] = (m * s * daX_V - d_er * s) / mm
    out[12] = 1.0 / mm
    out[13] = m * s / (M * mm)
    out[14] = daX_V
    out[15] = 1.0 / M


def rollout_adjoint(states, mu, xnom, kp, kd, double u_max, params,
                    double dt, double r_min, gx, gmu):
    """Reverse sweep of rollout_closed_loop; same contract as the numpy twin."""
    cdef double[:, :, ::1] st = np.ascontiguousarray(states, dtype=np.float64)
    cdef double[:, :, ::1] muv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double[:, ::1] kpv = np.ascontiguousarray(kp, dtype=np.float64)
    cdef double[:, ::1] kdv = np.ascontiguousarray(kd, dtype=np.float64)
    cdef double[:, ::1] pv = np.ascontiguousarray(params, dtype=np.float64)
    cdef double[:, :, ::1] gxv = np.ascontiguousarray(gx, dtype=np.float64)
    cdef double[:, :, ::1] gmuv = np.ascontiguousarray(gmu, dtype=np.float64)
    cdef Py_ssize_t N = st.shape[0]
    cdef Py_ssize_t T = st.shape[1] - 1
    guff_arr = np.zeros((T + 1, 4))
    gnom_arr = np.zeros((T + 1, 12))
    cdef double[:, ::1] guff = guff_arr
    cdef double[:, ::1] gnom = gnom_arr
    cdef Py_ssize_t i, k, j, q
    cdef double lam[12]
    cdef double ln[12]
    cdef double gmu_k[4]
    cdef double gpre[4]
    cdef double pp[16]
    cdef double slope, geq, gev, lth, lr, lX
    with nogil:
        for i in range(N):
            for q in range(12):
                lam[q] = gxv[i, T, q]
            # seed push at the final index
            for j in range(4):
                slope = 1.0 - (muv[i, T, j] / u_max) * (muv[i, T, j] / u_max)
                gpre[j] = slope * gmuv[i, T, j]
                guff[T, j] += gpre[j]
            for q in range(4):
                geq = 0.0
                gev = 0.0
                for j in range(4):
                    geq += gpre[j] * kpv[j, q]
                    gev += gpre[j] * kdv[j, q]
                lam[q] -= geq
                lam[4 + q] -= gev
                gnom[T, q] += geq
                gnom[T, 4 + q] += gev
            for k in range(T - 1, -1, -1):
                lam[5] += lam[6]
                lam[6] = 0.0
                for j in range(4):
                    gmu_k[j] = gmuv[i, k, j] + dt * lam[8 + j] / pv[i, 9 + j]
                accel_partials(&st[i, k, 0], &pv[i, 0], r_min, pp)
                lth = lam[4]
                lr = lam[5]
                lX = lam[7]
                for q in range(12):
                    ln[q] = lam[q]
                ln[0] += dt * (lth * pp[0] + lr * pp[7])
                ln[1] += dt * (lth * pp[1] + lr * pp[8])
                ln[4] += dt * (lam[0] + lth * pp[2] + lr * pp[9])
                ln[5] += dt * (lam[1] + lth * pp[3] + lr * pp[10])
                ln[6] += dt * lam[2]
                ln[7] += dt * (lam[3] + lth * pp[4] + lr * pp[11] + lX * pp[14])
                ln[8] += dt * (lth * pp[5] - lam[8] / pv[i, 9])
                ln[9] += dt * (lr * pp[12] - lam[9] / pv[i, 10])
                ln[10] += dt * (lr * pp[12] - lam[10] / pv[i, 11])
                ln[11] += dt * (lth * pp[6] + lr * pp[13] + lX * pp[15]
                                - lam[11] / pv[i, 12])
                for q in range(12):
                    lam[q] = ln[q] + gxv[i, k, q]
                for j in range(4):
                    slope = 1.0 - (muv[i, k, j] / u_max) * (muv[i, k, j] / u_max)
                    gpre[j] = slope * gmu_k[j]
                    guff[k, j] += gpre[j]
                for q in range(4):
                    geq = 0.0
                    gev = 0.0
                    for j in range(4):
                        geq += gpre[j] * kpv[j, q]
                        gev += gpre[j] * kdv[j, q]
                    lam[q] -= geq
                    lam[4 + q] -= gev
                    gnom[k, q] += geq
                    gnom[k, 4 + q] += gev
    return guff_arr, gnom_arr


def rollout_open_loop(x0, useq, params, double dt, double r_min, noise=None):
    """Open-loop batch rollout; same contract as the numpy twin."""
    cdef double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef double[:, :, ::1] uv = np.ascontiguousarray(useq, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(
        np.asarray(params, dtype=np.float64).reshape(13))
    cdef Py_ssize_t N = uv.shape[0]
    cdef Py_ssize_t H = uv.shape[1]
    cdef bint has_noise = noise is not None
    if not has_noise:
        noise = np.zeros((1, 1, 12))
    cdef double[:, :, ::1] nzv = np.ascontiguousarray(noise, dtype=np.float64)
    states_arr = np.empty((N, H + 1, 12))
    valid_arr = np.ones(N, dtype=np.uint8)
    cdef double[:, :, ::1] st = states_arr
    cdef unsigned char[::1] valid = valid_arr
    cdef Py_ssize_t i, k, q
    cdef double xn[12]
    cdef double zero[12]
    for q in range(12):
        zero[q] = 0.0
    if x0v[1] <= r_min:
        for i in range(N):
            valid[i] = 0
    with nogil:
        for i in range(N):
            for q in range(12):
                st[i, 0, q] = x0v[q]
            for k in range(H):
                if has_noise:
                    step_state(&st[i, k, 0], &uv[i, k, 0], &pv[0],
                               &nzv[i, k, 0], dt, r_min, xn)
                else:
                    step_state(&st[i, k, 0], &uv[i, k, 0], &pv[0],
                               zero, dt, r_min, xn)
                for q in range(12):
                    st[i, k + 1, q] = xn[q]
                    if not (fabs(xn[q]) < CAP):
                        valid[i] = 0
                if xn[1] <= r_min:
                    valid[i] = 0
    return states_arr, valid_arr.astype(bool)
