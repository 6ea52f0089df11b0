"""Baseline planners and controllers: lattice A*, PID tracking, the CBF
safety filter, and sampling MPC."""

import numpy as np
import pytest

from conftest import hover_state
from tetherplan import model
from tetherplan.baselines import (
    GridSpec,
    MPPIHyper,
    NoPathError,
    PIDGains,
    astar_plan,
    cbf_filter,
    mppi_step,
    pid_track,
)

SQRT2 = np.sqrt(2.0)


# ------------------------------------------------------------------------ A*

def dijkstra_cost(nx, nd, cell, blocked, start, goal, connectivity=8):
    """Independent shortest-path oracle on the same lattice (O(V^2) scan)."""
    moves = [(1, 0, cell), (-1, 0, cell), (0, 1, cell), (0, -1, cell)]
    if connectivity == 8:
        moves += [(1, 1, cell * SQRT2), (1, -1, cell * SQRT2),
                  (-1, 1, cell * SQRT2), (-1, -1, cell * SQRT2)]
    if blocked(*start) or blocked(*goal):
        return None
    dist = {start: 0.0}
    done = set()
    while True:
        cur, best = None, np.inf
        for n, v in dist.items():
            if n not in done and v < best:
                cur, best = n, v
        if cur is None:
            return None
        if cur == goal:
            return best
        done.add(cur)
        for di, dj, c in moves:
            ni, nj = cur[0] + di, cur[1] + dj
            if 0 <= ni < nx and 0 <= nj < nd and not blocked(ni, nj):
                if best + c < dist.get((ni, nj), np.inf):
                    dist[(ni, nj)] = best + c
    return None


def test_astar_matches_bruteforce_on_random_grids():
    rng = np.random.default_rng(7)
    checked = 0
    trial = 0
    while checked < 10:
        trial += 1
        nx = int(rng.integers(4, 21))
        nd = int(rng.integers(4, 21))
        grid = GridSpec(cell=1.0, bounds=(0.0, float(nx - 1), 0.0, float(nd - 1)),
                        inflation=float(rng.uniform(0.0, 1.0)))
        n_obs = int(rng.integers(0, 5))
        obstacles = np.column_stack([
            rng.uniform(0, nx - 1, n_obs),
            rng.uniform(0, nd - 1, n_obs),
            rng.uniform(0.5, 3.0, n_obs),
        ]) if n_obs else np.zeros((0, 3))

        def blocked(i, j):
            for ox, od, oa in obstacles:
                if np.hypot(i - ox, j - od) <= oa + grid.inflation:
                    return True
            return False

        start = (int(rng.integers(0, nx)), int(rng.integers(0, nd)))
        goal = (int(rng.integers(0, nx)), int(rng.integers(0, nd)))
        expect = dijkstra_cost(nx, nd, 1.0, blocked, start, goal)
        try:
            plan = astar_plan(grid, (float(start[0]), float(start[1])),
                              (float(goal[0]), float(goal[1])), obstacles)
        except NoPathError:
            assert expect is None, f"trial {trial}: A* failed a solvable grid"
        else:
            assert expect is not None, f"trial {trial}: A* solved a blocked grid"
            assert plan.grid_cost == pytest.approx(expect, abs=1e-9)
        checked += 1
    assert trial == checked  # every drawn grid was compared


def test_astar_corner_of_small_grid():
    grid = GridSpec(cell=1.0, bounds=(0.0, 2.0, 0.0, 2.0))
    plan = astar_plan(grid, (0.0, 0.0), (2.0, 2.0), np.zeros((0, 3)))
    assert plan.grid_cost == pytest.approx(2.0 * SQRT2, abs=1e-12)
    assert np.array_equal(plan.waypoints[0], [0.0, 0.0])
    assert np.array_equal(plan.waypoints[-1], [2.0, 2.0])


def test_astar_start_equals_goal():
    grid = GridSpec(cell=1.0, bounds=(0.0, 4.0, 0.0, 4.0))
    plan = astar_plan(grid, (1.0, 1.0), (1.0, 1.0), np.zeros((0, 3)))
    assert plan.grid_cost == 0.0
    assert plan.waypoints.shape[0] == 1
    assert np.array_equal(plan.ref_at(0.0), [1.0, 1.0])
    assert np.array_equal(plan.ref_at(7.3), [1.0, 1.0])


def test_astar_blocked_endpoints_raise():
    grid = GridSpec(cell=1.0, bounds=(0.0, 4.0, 0.0, 4.0), inflation=0.2)
    wall = np.array([[2.0, 2.0, 0.5]])
    with pytest.raises(NoPathError):
        astar_plan(grid, (2.0, 2.0), (4.0, 4.0), wall)
    with pytest.raises(NoPathError):
        astar_plan(grid, (0.0, 0.0), (2.0, 2.0), wall)
    with pytest.raises(NoPathError):
        astar_plan(grid, (-1.0, 0.0), (2.0, 2.0), np.zeros((0, 3)))


def test_astar_constant_speed_reference():
    grid = GridSpec(cell=1.0, bounds=(0.0, 4.0, 0.0, 4.0))
    plan = astar_plan(grid, (0.0, 0.0), (2.0, 0.0), np.zeros((0, 3)), t_f=8.0)
    assert np.allclose(plan.ref_at(4.0), [1.0, 0.0], atol=1e-12)
    assert np.array_equal(plan.ref_at(-1.0), plan.waypoints[0])
    assert np.array_equal(plan.ref_at(99.0), plan.waypoints[-1])


def test_astar_routes_clear_of_inflated_obstacle():
    grid = GridSpec(cell=0.1, bounds=(0.0, 8.0, 0.0, 8.0), inflation=0.7)
    obstacle = np.array([[3.0, 2.0, 0.8]])
    plan = astar_plan(grid, (1.0, 1.0), (5.0, 3.2), obstacle)
    straight = np.hypot(4.0, 2.2)
    assert plan.grid_cost > straight
    clear = np.hypot(plan.waypoints[:, 0] - 3.0, plan.waypoints[:, 1] - 2.0)
    assert clear.min() > 0.8 + 0.7 - 1e-12


# ----------------------------------------------------------------------- PID

def test_pid_gain_validation():
    with pytest.raises(ValueError):
        PIDGains(ki=[-1.0, 0.0, 0.0]).validate()
    with pytest.raises(ValueError):
        PIDGains(kp=[np.nan, 0.0, 0.0]).validate()


def test_pid_zero_error_applies_weight_feedforward(light_params):
    state = hover_state(light_params)
    ref = model.output(state)
    u, integ = pid_track(ref, state, PIDGains(), 0.05, params=light_params)
    assert np.allclose(u, [0.0, -196.0, 0.0, 0.0], atol=1e-12)
    assert np.array_equal(integ, np.zeros(3))


def test_pid_proportional_channels(light_params):
    gains = PIDGains(kp=np.full(3, 100.0), ki=np.zeros(3), kd=np.full(3, 80.0))
    state = hover_state(light_params)     # theta = 0, at rest, d = 2
    y = model.output(state)
    # deeper demand pulls the radial channel up from the feedforward
    u, _ = pid_track(y + [0.0, 1.0, 0.0], state, gains, 0.05, params=light_params)
    assert u[1] == pytest.approx(100.0 - 196.0, abs=1e-12)
    assert u[0] == 0.0 and u[3] == 0.0
    # lateral demand maps to the tangential channel with a sign flip at theta=0
    u, _ = pid_track(y + [1.0, 0.0, 0.0], state, gains, 0.05, params=light_params)
    assert u[0] == pytest.approx(-100.0, abs=1e-12)
    # surface-vessel demand goes straight to the USV channel
    u, _ = pid_track(y + [0.0, 0.0, 1.0], state, gains, 0.05, params=light_params)
    assert u[3] == pytest.approx(100.0, abs=1e-12)
    assert u[2] == 0.0  # winch channel is never commanded


def test_pid_integral_accumulates_and_clamps(light_params):
    gains = PIDGains(kp=np.zeros(3), ki=np.full(3, 20.0), kd=np.zeros(3))
    state = hover_state(light_params)
    ref = model.output(state) + [0.0, 1.0, 0.0]
    integ = None
    for n in range(1, 4):
        u, integ = pid_track(ref, state, gains, 0.05, integrator=integ,
                             params=light_params)
        assert integ[1] == pytest.approx(n * 0.05, abs=1e-14)
        assert u[1] == pytest.approx(20.0 * n * 0.05 - 196.0, abs=1e-12)
    # anti-windup: the integral stops at u_max / ki
    for _ in range(500):
        u, integ = pid_track(ref, state, gains, 0.05, integrator=integ,
                             params=light_params)
    assert integ[1] == pytest.approx(400.0 / 20.0, abs=1e-12)


def test_pid_without_integral_gain_is_memoryless(light_params):
    gains = PIDGains(ki=np.zeros(3))
    state = hover_state(light_params)
    ref = model.output(state) + [0.5, -0.3, 0.2]
    u_a, _ = pid_track(ref, state, gains, 0.05, integrator=None, params=light_params)
    u_b, _ = pid_track(ref, state, gains, 0.05, integrator=np.ones(3),
                       params=light_params)
    assert np.array_equal(u_a, u_b)


def test_pid_output_respects_input_box(table_params):
    state = hover_state(table_params)
    ref = model.output(state) + [50.0, 50.0, 50.0]
    u, _ = pid_track(ref, state, PIDGains(), 0.05, params=table_params)
    assert np.all(np.abs(u) <= table_params.u_max)


# ----------------------------------------------------------------------- CBF

def _approach_state(vr=0.0):
    x = np.zeros(12)
    x[model.I_R] = x[model.I_L] = 2.0
    x[model.I_R_DOT] = x[model.I_L_DOT] = vr
    return x


def test_cbf_inactive_returns_nominal(table_params):
    state = _approach_state()
    far = np.array([[6.0, 6.0, 0.5]])
    u_nom = np.array([10.0, -50.0, 20.0, 30.0])
    u, info = cbf_filter(u_nom, state, far, table_params)
    assert np.array_equal(u, u_nom)
    assert not info["active"] and not info["fallback"]
    # out-of-box requests are clipped before the test
    u, info = cbf_filter(np.array([550.0, 0.0, 0.0, -999.0]), state, far,
                         table_params)
    assert np.array_equal(u, [400.0, 0.0, 0.0, -400.0])


def test_cbf_active_matches_hand_kkt(table_params):
    """Straight-down hang sinking toward an obstacle below: the constraint
    row only touches the two radial channels, so the equality-constrained
    QP solution is u_nom + nu*beta with nu from one scalar equation."""
    p = table_params
    vr = 1.0
    state = _approach_state(vr)
    obstacle = np.array([[0.0, 3.2, 0.5]])
    u_nom = np.zeros(4)
    k0 = k1 = 4.0

    # independent derivation at theta = 0, omega = 0, V = 0
    pd = 2.0 - 3.2
    h = pd ** 2 - 0.5 ** 2
    h_dot = 2.0 * pd * vr
    mm = p.m + p.M_l
    ddd0 = (p.m_bar * p.g - p.c_r * abs(vr) * vr - p.c_l * vr) / mm
    beta = 2.0 * pd * np.array([0.0, 1.0 / mm, 1.0 / mm, 0.0])
    beta0 = 2.0 * (vr ** 2 + pd * ddd0)
    b_req = -(beta0 + k1 * h_dot + k0 * h)
    assert beta @ u_nom < b_req  # the nominal input is unsafe here
    nu = (b_req - beta @ u_nom) / (beta @ beta)
    u_expect = u_nom + nu * beta
    assert np.all(np.abs(u_expect) < p.u_max - 1.0)  # interior of the box

    u, info = cbf_filter(u_nom, state, obstacle, p, k0=k0, k1=k1)
    assert info["active"] and not info["fallback"]
    assert info["h"] == pytest.approx(h, abs=1e-12)
    assert info["h_dot"] == pytest.approx(h_dot, abs=1e-12)
    assert np.allclose(u, u_expect, atol=1e-6)
    assert u[1] == u[2]  # symmetric radial split
    assert beta @ u >= b_req - 1e-6


def test_cbf_fallback_takes_safety_vertex(table_params):
    state = _approach_state()
    # already deep inside: no admissible input satisfies the condition
    obstacle = np.array([[0.0, 2.5, 2.0]])
    u, info = cbf_filter(np.zeros(4), state, obstacle, table_params)
    assert info["fallback"] and info["active"]
    assert info["h"] == pytest.approx(0.5 ** 2 - 4.0, abs=1e-12)
    assert np.array_equal(u, [0.0, -400.0, -400.0, 0.0])


def test_cbf_enforces_nearest_of_several(table_params):
    state = _approach_state(1.0)
    both = np.array([[0.0, 3.2, 0.5], [0.0, 8.0, 0.5]])
    _, info = cbf_filter(np.zeros(4), state, both, table_params)
    assert info["h"] == pytest.approx(1.2 ** 2 - 0.25, abs=1e-12)


# ---------------------------------------------------------------------- MPPI

def _mppi_state():
    x = np.zeros(12)
    x[model.I_R] = x[model.I_L] = 2.0
    x[model.I_X] = 1.0
    return x


def _mppi_noise(seed, n, H, dt=0.05, knot_dt=0.5, std=0.25 * 400.0):
    """The sampler's draw: one normal per exploration knot, held over the
    steps it covers."""
    rng = np.random.default_rng(seed)
    reps = max(1, int(round(knot_dt / dt)))
    eps = rng.normal(0.0, std, size=(n, -(-H // reps), 4))
    return np.repeat(eps, reps, axis=1)[:, :H, :]


def test_mppi_hyper_validation():
    with pytest.raises(ValueError):
        MPPIHyper(n_samples=0).validate()
    with pytest.raises(ValueError):
        MPPIHyper(lam=0.0).validate()


def test_mppi_single_sample_returns_that_sample(table_params):
    hyper = MPPIHyper(n_samples=1, horizon=0.5)
    state = _mppi_state()
    u, base = mppi_step(state, [1.0, 2.0, 1.0], np.zeros((0, 3)), hyper, 123,
                        table_params)
    # with one sample the weight is 1 regardless of cost
    eps = _mppi_noise(123, 1, 10)
    tile = np.tile([0.0, 0.0, -table_params.m_bar * table_params.g, 0.0], (10, 1))
    expect = np.clip(tile[None] + eps, -400.0, 400.0)[0]
    assert np.array_equal(u, expect[0])
    assert np.array_equal(base[:-1], expect[1:])
    assert np.array_equal(base[-1], expect[-1])


def test_mppi_constant_cost_averages_uniformly(table_params):
    hyper = MPPIHyper(n_samples=16, horizon=0.5, w_terminal=0.0, w_obstacle=0.0)
    state = _mppi_state()
    u, _ = mppi_step(state, [1.0, 2.0, 1.0], np.zeros((0, 3)), hyper, 9,
                     table_params, R=np.zeros((4, 4)))
    eps = _mppi_noise(9, 16, 10)
    tile = np.tile([0.0, 0.0, -table_params.m_bar * table_params.g, 0.0], (10, 1))
    useq = np.clip(tile[None] + eps, -400.0, 400.0)
    assert np.allclose(u, useq[:, 0, :].mean(axis=0), atol=1e-12)


def test_mppi_uniform_when_every_rollout_breaches(table_params):
    # all samples breach the tether floor: the invalid surcharge is common,
    # so the weights collapse back to uniform
    state = _mppi_state()
    state[model.I_R] = state[model.I_L] = 0.08
    state[model.I_R_DOT] = state[model.I_L_DOT] = -3.0
    hyper = MPPIHyper(n_samples=8, horizon=0.5, w_terminal=0.0, w_obstacle=0.0)
    u, _ = mppi_step(state, [1.0, 2.0, 1.0], np.zeros((0, 3)), hyper, 5,
                     table_params, R=np.zeros((4, 4)))
    eps = _mppi_noise(5, 8, 10)
    tile = np.tile([0.0, 0.0, -table_params.m_bar * table_params.g, 0.0], (10, 1))
    useq = np.clip(tile[None] + eps, -400.0, 400.0)
    assert np.all(np.isfinite(u))
    assert np.allclose(u, useq[:, 0, :].mean(axis=0), atol=1e-12)


def test_mppi_large_lambda_approaches_uniform_mean(table_params):
    state = _mppi_state()
    kw = dict(n_samples=8, horizon=0.5)
    u_flat, _ = mppi_step(state, [3.0, 3.0, 3.0], np.zeros((0, 3)),
                          MPPIHyper(lam=1e15, **kw), 21, table_params)
    eps = _mppi_noise(21, 8, 10)
    tile = np.tile([0.0, 0.0, -table_params.m_bar * table_params.g, 0.0], (10, 1))
    useq = np.clip(tile[None] + eps, -400.0, 400.0)
    assert np.allclose(u_flat, useq[:, 0, :].mean(axis=0), atol=1e-6)


def test_mppi_deterministic_in_seed(table_params):
    state = _mppi_state()
    hyper = MPPIHyper(n_samples=32, horizon=0.5)
    args = (state, [3.0, 3.0, 3.0], np.array([[2.0, 2.0, 0.5]]), hyper)
    u1, b1 = mppi_step(*args, 77, table_params)
    u2, b2 = mppi_step(*args, 77, table_params)
    u3, _ = mppi_step(*args, 78, table_params)
    assert np.array_equal(u1, u2) and np.array_equal(b1, b2)
    assert not np.array_equal(u1, u3)
