"""Competitor controllers: A* grid planning, Cartesian PID tracking, a
control-barrier QP safety filter, and MPPI. All of them reason with the
expected plant parameters and the observed obstacle set; none of them sees
the evaluation truth.
"""

import heapq
from dataclasses import dataclass, field

import numpy as np

from . import model
from ._kernels import rollout_open_loop


class NoPathError(RuntimeError):
    """A* could not connect start and goal on the inflated grid."""


@dataclass
class GridSpec:
    """Lattice for the A* planner. Nodes sit on an axis-aligned grid of
    pitch `cell` inside `bounds` = (x_min, x_max, d_min, d_max)."""

    cell: float = 0.1
    bounds: tuple = (0.0, 8.0, 0.0, 8.0)
    connectivity: int = 8
    inflation: float = 0.2

    def validate(self):
        if self.cell <= 0:
            raise ValueError("cell size must be > 0")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")
        x0, x1, d0, d1 = self.bounds
        if not (x1 > x0 and d1 > d0):
            raise ValueError("bounds must span a nonempty box")
        if self.inflation < 0:
            raise ValueError("inflation must be >= 0")
        return self


@dataclass
class PathPlan:
    """Timestamped waypoint polyline for the tracking baseline."""

    waypoints: np.ndarray   # (n, 2) of (x, d)
    times: np.ndarray       # (n,)
    t_f: float
    grid_cost: float        # lattice shortest-path cost (excludes endpoint stubs)

    def ref_at(self, t: float) -> np.ndarray:
        """Reference (x, d) at time t; clamped to the endpoints."""
        x = np.interp(t, self.times, self.waypoints[:, 0])
        d = np.interp(t, self.times, self.waypoints[:, 1])
        return np.array([x, d])


def _blocked(px, pd, obstacles, inflation):
    for ox, od, oa in obstacles:
        if np.hypot(px - ox, pd - od) <= oa + inflation:
            return True
    return False


def astar_plan(grid: GridSpec, start, goal, obstacles, t_f: float = 12.0) -> PathPlan:
    """Shortest lattice path from start to goal under Euclidean edge costs
    with the straight-line heuristic, avoiding obstacles inflated by the
    grid margin; the result is reparameterized at constant speed over
    [0, t_f]. Raises NoPathError when start/goal are blocked or unreachable.
    """
    grid.validate()
    obstacles = np.asarray(obstacles, dtype=float).reshape(-1, 3)
    x0b, x1b, d0b, d1b = grid.bounds
    h = grid.cell
    nx = int(round((x1b - x0b) / h)) + 1
    nd = int(round((d1b - d0b) / h)) + 1

    def to_node(p):
        i = int(round((p[0] - x0b) / h))
        j = int(round((p[1] - d0b) / h))
        if not (0 <= i < nx and 0 <= j < nd):
            raise NoPathError(f"point {tuple(p)} outside the grid bounds")
        return i, j

    def to_point(node):
        return x0b + node[0] * h, d0b + node[1] * h

    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    s_node = to_node(start)
    g_node = to_node(goal)
    for node, label in ((s_node, "start"), (g_node, "goal")):
        if _blocked(*to_point(node), obstacles, grid.inflation):
            raise NoPathError(f"{label} lies inside an inflated obstacle")

    if grid.connectivity == 8:
        moves = [(1, 0, h), (-1, 0, h), (0, 1, h), (0, -1, h),
                 (1, 1, h * np.sqrt(2.0)), (1, -1, h * np.sqrt(2.0)),
                 (-1, 1, h * np.sqrt(2.0)), (-1, -1, h * np.sqrt(2.0))]
    else:
        moves = [(1, 0, h), (-1, 0, h), (0, 1, h), (0, -1, h)]

    def heur(node):
        return np.hypot((node[0] - g_node[0]) * h, (node[1] - g_node[1]) * h)

    g_score = {s_node: 0.0}
    parent = {}
    closed = set()
    counter = 0
    heap = [(heur(s_node), counter, s_node)]
    found = False
    while heap:
        _, _, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        if cur == g_node:
            found = True
            break
        closed.add(cur)
        ci, cj = cur
        base = g_score[cur]
        for di, dj, cost in moves:
            ni, nj = ci + di, cj + dj
            if not (0 <= ni < nx and 0 <= nj < nd):
                continue
            nxt = (ni, nj)
            if nxt in closed:
                continue
            if _blocked(x0b + ni * h, d0b + nj * h, obstacles, grid.inflation):
                continue
            cand = base + cost
            if cand < g_score.get(nxt, np.inf):
                g_score[nxt] = cand
                parent[nxt] = cur
                counter += 1
                heapq.heappush(heap, (cand + heur(nxt), counter, nxt))
    if not found:
        raise NoPathError("goal unreachable on the inflated grid")

    nodes = [g_node]
    while nodes[-1] != s_node:
        nodes.append(parent[nodes[-1]])
    nodes.reverse()
    pts = [to_point(n) for n in nodes]
    # exact endpoints on each side of the lattice polyline (zero-length
    # stubs when start/goal sit on nodes)
    way = [tuple(start)] + pts + [tuple(goal)]
    dedup = [way[0]]
    for p in way[1:]:
        if np.hypot(p[0] - dedup[-1][0], p[1] - dedup[-1][1]) > 1e-12:
            dedup.append(p)
    way = np.asarray(dedup, dtype=float)
    seg = np.hypot(np.diff(way[:, 0]), np.diff(way[:, 1]))
    arclen = np.concatenate([[0.0], np.cumsum(seg)])
    total = arclen[-1]
    times = arclen / total * t_f if total > 0 else np.zeros(way.shape[0])
    return PathPlan(way, times, t_f, grid_cost=float(g_score[g_node]))


@dataclass
class PIDGains:
    """Per-output-channel (x, d, X) PID gains for the tracking baseline."""

    kp: np.ndarray = field(default_factory=lambda: np.full(3, 800.0))
    ki: np.ndarray = field(default_factory=lambda: np.full(3, 20.0))
    kd: np.ndarray = field(default_factory=lambda: np.full(3, 80.0))

    def __post_init__(self):
        self.kp = np.asarray(self.kp, dtype=float).reshape(3)
        self.ki = np.asarray(self.ki, dtype=float).reshape(3)
        self.kd = np.asarray(self.kd, dtype=float).reshape(3)

    def validate(self):
        if np.any(~np.isfinite(self.kp)) or np.any(~np.isfinite(self.ki)) \
                or np.any(~np.isfinite(self.kd)):
            raise ValueError("PID gains must be finite")
        if np.any(self.ki < 0):
            raise ValueError("integral gains must be >= 0")
        return self


def pid_track(ref, state, gains: PIDGains, dt: float, integrator=None,
              params: model.ModelParams = None):
    """Cartesian PID toward ref = (x_ref, d_ref, X_ref).

    The planar force request is mapped to the vehicle's tangential/radial
    channels through the position Jacobian transpose; the radial channel
    carries a constant apparent-weight feedforward; the winch channel is
    left at zero. Derivative action uses the measured rates. Returns
    (input, advanced integrator); the integrator is clamped so its force
    contribution never exceeds u_max (anti-windup).
    """
    if params is None:
        params = model.ModelParams()
    s = np.asarray(state, dtype=float)
    ref = np.asarray(ref, dtype=float).reshape(3)
    integ = np.zeros(3) if integrator is None else np.asarray(integrator, dtype=float).copy()
    y = model.output(s)
    e = ref - y
    theta, r = s[model.I_THETA], s[model.I_R]
    om, vr, V = s[model.I_THETA_DOT], s[model.I_R_DOT], s[model.I_X_DOT]
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    x_dot = V - vr * sin_t - r * om * cos_t
    d_dot = vr * cos_t - r * om * sin_t
    rates = np.array([x_dot, d_dot, V])

    integ += e * dt
    lim = np.where(gains.ki > 0, params.u_max / np.where(gains.ki > 0, gains.ki, 1.0), np.inf)
    integ = np.clip(integ, -lim, lim)

    F = gains.kp * e + gains.ki * integ - gains.kd * rates
    u = np.array([
        -cos_t * F[0] - sin_t * F[1],
        -sin_t * F[0] + cos_t * F[1] - params.m_bar * params.g,
        0.0,
        F[2],
    ])
    return np.clip(u, -params.u_max, params.u_max), integ


def _accel_affine(state, params: model.ModelParams):
    """(theta_dd, r_dd, X_dd) as (constant, gradient-in-u) pairs with the
    actuator lag neglected (commanded force applied instantly)."""
    s = np.asarray(state, dtype=float)
    theta, r = s[model.I_THETA], s[model.I_R]
    r = max(r, model.R_MIN)
    om, vr, V = s[model.I_THETA_DOT], s[model.I_R_DOT], s[model.I_X_DOT]
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    m, m_bar, M, M_l, g = params.m, params.m_bar, params.M, params.M_l, params.g
    mm = m + M_l
    w_theta = V * cos_t + r * om
    w_r = V * sin_t + vr
    eta_theta = params.c_theta * abs(w_theta) * w_theta
    eta_r = params.c_r * abs(w_r) * w_r
    aX0 = -params.c_X * V / M
    aX_u = np.array([0.0, 0.0, 0.0, 1.0 / M])
    ath0 = (m * aX0 * cos_t - 2 * m * vr * om - m_bar * g * sin_t - eta_theta) / (m * r)
    ath_u = np.array([1.0 / (m * r), 0.0, 0.0, cos_t / (M * r)])
    ar0 = (m * aX0 * sin_t + m * r * om * om + m_bar * g * cos_t
           - eta_r - params.c_l * vr) / mm
    ar_u = np.array([0.0, 1.0 / mm, 1.0 / mm, m * sin_t / (M * mm)])
    return (ath0, ath_u), (ar0, ar_u), (aX0, aX_u)


def cbf_filter(u_nom, state, obstacle, params: model.ModelParams,
               k0: float = 4.0, k1: float = 4.0):
    """Minimally-invasive safety filter.

    Solves min ||u - u_nom||^2 subject to the second-order barrier condition
    on h = squared distance to the obstacle center minus squared radius,
    inside the input box. Exact solution via bisection on the scalar dual of
    the single linear constraint. Returns (input, diagnostics dict); when
    even the safety-maximizing vertex cannot satisfy the condition the
    filter applies that vertex and flags `fallback`.

    With several obstacles the nearest one (smallest h) is enforced.
    """
    s = np.asarray(state, dtype=float)
    u_nom = np.clip(np.asarray(u_nom, dtype=float), -params.u_max, params.u_max)
    obstacles = np.asarray(obstacle, dtype=float).reshape(-1, 3)
    y = model.output(s)
    hs = (y[0] - obstacles[:, 0]) ** 2 + (y[1] - obstacles[:, 1]) ** 2 - obstacles[:, 2] ** 2
    idx = int(np.argmin(hs))
    ox, od, _ = obstacles[idx]
    h = float(hs[idx])

    theta, r = s[model.I_THETA], s[model.I_R]
    om, vr, V = s[model.I_THETA_DOT], s[model.I_R_DOT], s[model.I_X_DOT]
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    px, pd = y[0] - ox, y[1] - od
    x_dot = V - vr * sin_t - r * om * cos_t
    d_dot = vr * cos_t - r * om * sin_t
    h_dot = 2.0 * (px * x_dot + pd * d_dot)

    (ath0, ath_u), (ar0, ar_u), (aX0, aX_u) = _accel_affine(s, params)
    # planar accelerations, affine in u
    xdd0 = aX0 - ar0 * sin_t - 2 * vr * om * cos_t - r * ath0 * cos_t + r * om * om * sin_t
    xdd_u = aX_u - ar_u * sin_t - r * ath_u * cos_t
    ddd0 = ar0 * cos_t - 2 * vr * om * sin_t - r * ath0 * sin_t - r * om * om * cos_t
    ddd_u = ar_u * cos_t - r * ath_u * sin_t
    beta0 = 2.0 * (x_dot ** 2 + d_dot ** 2 + px * xdd0 + pd * ddd0)
    beta = 2.0 * (px * xdd_u + pd * ddd_u)
    b_req = -(beta0 + k1 * h_dot + k0 * h)

    info = {"h": h, "h_dot": h_dot, "active": False, "fallback": False, "nu": 0.0}
    if float(beta @ u_nom) >= b_req:
        return u_nom, info

    info["active"] = True
    u_best = np.where(beta != 0.0, params.u_max * np.sign(beta), u_nom)
    if float(beta @ u_best) < b_req:
        info["fallback"] = True
        return u_best, info

    def g(nu):
        return float(beta @ np.clip(u_nom + nu * beta, -params.u_max, params.u_max))

    hi = 1.0
    while g(hi) < b_req and hi < 1e12:
        hi *= 2.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) < b_req:
            lo = mid
        else:
            hi = mid
    info["nu"] = hi
    return np.clip(u_nom + hi * beta, -params.u_max, params.u_max), info


@dataclass
class MPPIHyper:
    """Sampling-based receding-horizon settings."""

    n_samples: int = 256
    horizon: float = 2.0
    lam: float = 1.0
    noise_std_scale: float = 0.25   # relative to u_max
    noise_knot_dt: float = 0.5      # perturbations held constant this long
    replan_dt: float = 0.05
    w_terminal: float = 500.0
    w_obstacle: float = 1e6
    invalid_cost: float = 1e9

    def validate(self):
        if self.n_samples < 1 or self.horizon <= 0 or self.lam <= 0 \
                or self.noise_std_scale <= 0 or self.noise_knot_dt <= 0 \
                or self.replan_dt <= 0:
            raise ValueError("MPPI hyperparameters must be positive")
        return self


def mppi_step(state, y_d, obstacles, hyper: MPPIHyper, seed,
              params: model.ModelParams, R=None, dt: float = 0.05,
              base_seq=None):
    """One receding-horizon MPPI decision.

    Samples input sequences around the running base sequence, clips them to
    the input box, rolls each out on the expected-parameter model, scores
    running input energy + quadratic terminal miss + obstacle penetration,
    and returns (first input of the exponentially weighted average, shifted
    base sequence for warm-starting the next call). Deterministic in seed.
    """
    hyper.validate()
    s = np.asarray(state, dtype=float)
    y_d = np.asarray(y_d, dtype=float).reshape(3)
    obstacles = np.asarray(obstacles, dtype=float).reshape(-1, 3)
    if R is None:
        R = np.eye(4) / params.m ** 2
    H = max(1, int(round(hyper.horizon / dt)))
    if base_seq is None:
        base = np.tile(np.array([0.0, 0.0, -params.m_bar * params.g, 0.0]), (H, 1))
    else:
        base = np.asarray(base_seq, dtype=float).reshape(H, 4)
    rng = np.random.default_rng(seed)
    # perturbations are piecewise constant over noise_knot_dt: independent
    # per-step noise averages itself out over the horizon and never explores
    # the sustained coordinated pulls this plant needs, so each sample holds
    # one draw per knot instead
    reps = max(1, int(round(hyper.noise_knot_dt / dt)))
    n_knots = -(-H // reps)
    eps = rng.normal(0.0, hyper.noise_std_scale * params.u_max,
                     size=(hyper.n_samples, n_knots, 4))
    eps = np.repeat(eps, reps, axis=1)[:, :H, :]
    useq = np.clip(base[None] + eps, -params.u_max, params.u_max)
    states, ok = rollout_open_loop(s, useq, params.as_array(), dt, model.R_MIN)
    y = model.output(states)
    cost = dt * np.einsum("nkj,jl,nkl->n", useq, R, useq)
    e_term = y[:, -1, :] - y_d
    cost += hyper.w_terminal * np.einsum("ij,ij->i", e_term, e_term)
    if obstacles.shape[0]:
        dx = y[:, :, 0, None] - obstacles[None, None, :, 0]
        dd = y[:, :, 1, None] - obstacles[None, None, :, 1]
        pen = np.maximum(obstacles[None, None, :, 2] - np.hypot(dx, dd), 0.0)
        cost += hyper.w_obstacle * dt * (pen ** 2).reshape(hyper.n_samples, -1).sum(axis=1)
    cost = np.where(ok, cost, cost + hyper.invalid_cost)
    w = np.exp(-(cost - cost.min()) / hyper.lam)
    w /= w.sum()
    mean_seq = np.einsum("n,nkj->kj", w, useq)
    next_base = np.vstack([mean_seq[1:], mean_seq[-1:]])
    return mean_seq[0].copy(), next_base
