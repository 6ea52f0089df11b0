"""Vectorized numpy backend for the hot rollout loops.

Semantics shared with the compiled twin (`_core.pyx`):

* explicit Euler(-Maruyama) stepping of the 12-state plant at fixed dt,
  additive pre-scaled noise, tether-rate row synced to the radial rate after
  every step;
* per-step applied input mu = u_max*tanh((u_ff + K_P e_q + K_D e_v)/u_max)
  with the angle error wrapped to (-pi, pi]; zero gains make this bitwise
  equal to the saturated open-loop plan;
* the radius is clamped at r_min only inside the dynamics evaluation so the
  recursion stays finite; any state whose integrated radius falls to or
  below the floor, or any state component reaching magnitude 1e6 (including
  NaN/inf from overflow), marks the sample invalid (integration continues);
* the adjoint walks the identical recursion backwards, reusing stored states
  and applied inputs, including the clamp indicator so value and gradient
  stay consistent.

params rows are packed as
[m, m_bar, M, M_l, g, c_theta, c_r, c_l, c_X, T_theta, T_r, T_l, T_X].
"""

import numpy as np

NAME = "numpy"

STATE_CAP = 1e6  # |state| at or past this flags the rollout invalid


def _wrap(a):
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def _accels(x, params, r_min):
    """Accelerations (a_theta, a_r, a_X) for a batch of states (N, 12)."""
    m, m_bar, M, M_l, g = (params[:, i] for i in range(5))
    c_theta, c_r, c_l, c_X = (params[:, 5 + i] for i in range(4))
    theta = x[:, 0]
    r = np.maximum(x[:, 1], r_min)
    om, vr, V = x[:, 4], x[:, 5], x[:, 7]
    f_theta, f_r, f_l, f_X = x[:, 8], x[:, 9], x[:, 10], x[:, 11]
    s, c = np.sin(theta), np.cos(theta)
    a_X = (f_X - c_X * V) / M
    w_theta = V * c + r * om
    w_r = V * s + vr
    eta_theta = c_theta * np.abs(w_theta) * w_theta
    eta_r = c_r * np.abs(w_r) * w_r
    a_theta = (m * a_X * c - 2.0 * m * vr * om - m_bar * g * s
               - eta_theta + f_theta) / (m * r)
    a_r = (m * a_X * s + m * r * om * om + m_bar * g * c
           - eta_r - c_l * vr + f_r + f_l) / (m + M_l)
    return a_theta, a_r, a_X


def _drift(x, mu, params, r_min):
    a_theta, a_r, a_X = _accels(x, params, r_min)
    b = np.empty_like(x)
    b[:, 0] = x[:, 4]
    b[:, 1] = x[:, 5]
    b[:, 2] = x[:, 6]
    b[:, 3] = x[:, 7]
    b[:, 4] = a_theta
    b[:, 5] = a_r
    b[:, 6] = a_r
    b[:, 7] = a_X
    b[:, 8:12] = (mu - x[:, 8:12]) / params[:, 9:13]
    return b


def rollout_closed_loop(x0, uff, xnom, kp, kd, u_max, params, noise, dt, r_min):
    """Batched closed-loop rollout.

    x0 (12,), uff (T+1, 4), xnom (T+1, 12), kp/kd (4, 4),
    params (N, 13), noise (N, T, 12) additive per-step increments.

    Returns (states (N, T+1, 12), mu (N, T+1, 4), valid (N,) bool).
    """
    x0 = np.asarray(x0, dtype=float)
    uff = np.asarray(uff, dtype=float)
    xnom = np.asarray(xnom, dtype=float)
    params = np.asarray(params, dtype=float)
    noise = np.asarray(noise, dtype=float)
    N = params.shape[0]
    T = uff.shape[0] - 1
    states = np.empty((N, T + 1, 12))
    mu = np.empty((N, T + 1, 4))
    valid = np.ones(N, dtype=bool)
    states[:, 0] = x0
    if x0[1] <= r_min:
        valid[:] = False
    kpT = kp.T
    kdT = kd.T
    for k in range(T + 1):
        xk = states[:, k]
        e_q = xnom[k, :4] - xk[:, :4]
        e_q = np.concatenate([_wrap(e_q[:, :1]), e_q[:, 1:]], axis=1)
        e_v = xnom[k, 4:8] - xk[:, 4:8]
        pre = uff[k] + e_q @ kpT + e_v @ kdT
        mu[:, k] = u_max * np.tanh(pre / u_max)
        if k < T:
            b = _drift(xk, mu[:, k], params, r_min)
            xn = xk + dt * b + noise[:, k]
            xn[:, 6] = xn[:, 5]
            states[:, k + 1] = xn
            # the < form flags NaN too (any NaN comparison is False)
            valid &= (xn[:, 1] > r_min) & (np.abs(xn) < STATE_CAP).all(axis=1)
    return states, mu, valid


def _accel_partials(x, params, r_min):
    """Partial derivatives of (a_theta, a_r, a_X) wrt the state entries they
    touch, with the radius clamp zeroing d/dr where active."""
    m, m_bar, M, M_l, g = (params[:, i] for i in range(5))
    c_theta, c_r, c_l, c_X = (params[:, 5 + i] for i in range(4))
    theta = x[:, 0]
    r_raw = x[:, 1]
    r = np.maximum(r_raw, r_min)
    live = (r_raw > r_min).astype(float)
    om, vr, V = x[:, 4], x[:, 5], x[:, 7]
    f_theta, f_X = x[:, 8], x[:, 11]
    s, c = np.sin(theta), np.cos(theta)
    mm = m + M_l
    a_X = (f_X - c_X * V) / M
    w_theta = V * c + r * om
    w_r = V * s + vr
    d_eth = 2.0 * c_theta * np.abs(w_theta)
    d_er = 2.0 * c_r * np.abs(w_r)
    eta_theta = c_theta * np.abs(w_theta) * w_theta
    a_theta = (m * a_X * c - 2.0 * m * vr * om - m_bar * g * s
               - eta_theta + f_theta) / (m * r)
    daX_V = -c_X / M
    daX_fX = 1.0 / M
    p = {
        "ath_th": (-m * a_X * s - m_bar * g * c + d_eth * V * s) / (m * r),
        "ath_r": ((-d_eth * om) / (m * r) - a_theta / r) * live,
        "ath_om": (-2.0 * m * vr - d_eth * r) / (m * r),
        "ath_vr": -2.0 * om / r,
        "ath_V": (m * c * daX_V - d_eth * c) / (m * r),
        "ath_fth": 1.0 / (m * r),
        "ath_fX": c / (M * r),
        "ar_th": (m * a_X * c - m_bar * g * s - d_er * V * c) / mm,
        "ar_r": (m * om * om / mm) * live,
        "ar_om": 2.0 * m * r * om / mm,
        "ar_vr": (-d_er - c_l) / mm,
        "ar_V": (m * s * daX_V - d_er * s) / mm,
        "ar_fr": 1.0 / mm,
        "ar_fX": m * s / (M * mm),
        "aX_V": daX_V * np.ones_like(theta),
        "aX_fX": daX_fX * np.ones_like(theta),
    }
    return p


def rollout_adjoint(states, mu, xnom, kp, kd, u_max, params, dt, r_min, gx, gmu):
    """Reverse sweep of rollout_closed_loop.

    gx (N, T+1, 12) and gmu (N, T+1, 4) seed d(cost)/d(state) and
    d(cost)/d(applied input) on the stored trajectory. Returns
    (guff (T+1, 4), gnom (T+1, 12)), each summed over the batch: the cost
    gradient wrt the feedforward table and wrt the nominal reference states.
    """
    states = np.asarray(states, dtype=float)
    mu = np.asarray(mu, dtype=float)
    xnom = np.asarray(xnom, dtype=float)
    params = np.asarray(params, dtype=float)
    gx = np.asarray(gx, dtype=float)
    gmu = np.asarray(gmu, dtype=float)
    N, T1, _ = states.shape
    T = T1 - 1
    guff = np.zeros((T + 1, 4))
    gnom = np.zeros((T + 1, 12))
    Tlag = params[:, 9:13]

    def _push(k, lam, gmu_k):
        # shared tail of every step: saturation slope, feedback coupling
        slope = 1.0 - (mu[:, k] / u_max) ** 2
        gpre = slope * gmu_k
        guff[k] += gpre.sum(axis=0)
        geq = gpre @ kp
        gev = gpre @ kd
        lam[:, 0:4] -= geq
        lam[:, 4:8] -= gev
        gnom[k, 0:4] += geq.sum(axis=0)
        gnom[k, 4:8] += gev.sum(axis=0)
        return lam

    lam = _push(T, gx[:, T].copy(), gmu[:, T])
    for k in range(T - 1, -1, -1):
        lt = lam
        lt[:, 5] += lt[:, 6]
        lt[:, 6] = 0.0
        gmu_k = gmu[:, k] + dt * lt[:, 8:12] / Tlag
        p = _accel_partials(states[:, k], params, r_min)
        lth, lr, lX = lt[:, 4], lt[:, 5], lt[:, 7]
        lam_new = lt.copy()
        lam_new[:, 0] += dt * (lth * p["ath_th"] + lr * p["ar_th"])
        lam_new[:, 1] += dt * (lth * p["ath_r"] + lr * p["ar_r"])
        lam_new[:, 4] += dt * (lt[:, 0] + lth * p["ath_om"] + lr * p["ar_om"])
        lam_new[:, 5] += dt * (lt[:, 1] + lth * p["ath_vr"] + lr * p["ar_vr"])
        lam_new[:, 6] += dt * lt[:, 2]
        lam_new[:, 7] += dt * (lt[:, 3] + lth * p["ath_V"] + lr * p["ar_V"]
                               + lX * p["aX_V"])
        lam_new[:, 8] += dt * (lth * p["ath_fth"] - lt[:, 8] / Tlag[:, 0])
        lam_new[:, 9] += dt * (lr * p["ar_fr"] - lt[:, 9] / Tlag[:, 1])
        lam_new[:, 10] += dt * (lr * p["ar_fr"] - lt[:, 10] / Tlag[:, 2])
        lam_new[:, 11] += dt * (lth * p["ath_fX"] + lr * p["ar_fX"]
                                + lX * p["aX_fX"] - lt[:, 11] / Tlag[:, 3])
        lam_new += gx[:, k]
        lam = _push(k, lam_new, gmu_k)
    return guff, gnom


def rollout_open_loop(x0, useq, params, dt, r_min, noise=None):
    """Batch of open-loop rollouts under directly-applied input sequences.

    x0 (12,), useq (N, H, 4) applied as-is (no saturation here),
    params (13,) shared across the batch, optional noise (N, H, 12).

    Returns (states (N, H+1, 12), valid (N,) bool).
    """
    x0 = np.asarray(x0, dtype=float)
    useq = np.asarray(useq, dtype=float)
    params = np.asarray(params, dtype=float).reshape(1, 13)
    N, H, _ = useq.shape
    pb = np.broadcast_to(params, (N, 13))
    states = np.empty((N, H + 1, 12))
    states[:, 0] = x0
    valid = np.ones(N, dtype=bool)
    if x0[1] <= r_min:
        valid[:] = False
    for k in range(H):
        b = _drift(states[:, k], useq[:, k], pb, r_min)
        xn = states[:, k] + dt * b
        if noise is not None:
            xn = xn + noise[:, k]
        xn[:, 6] = xn[:, 5]
        states[:, k + 1] = xn
        valid &= (xn[:, 1] > r_min) & (np.abs(xn) < STATE_CAP).all(axis=1)
    return states, valid
