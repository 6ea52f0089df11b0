import numpy as np
import pytest

from conftest import hover_state
from tetherplan import control, model, stochastic


def two_knot_plan(hold):
    return control.ControlPlan(
        knot_times=np.array([0.0, 1.0]),
        knot_values=np.array([[0.0, 0.0, 0.0, 0.0], [4.0, 0.0, 0.0, 0.0]]),
        t_f=2.0, hold=hold)


def test_single_knot_any_time():
    plan = control.constant_plan([1.0, 2.0, 3.0, 4.0], t_f=1.0, knot_dt=2.0)
    assert plan.n_knots == 1
    for t in (0.0, 0.3, 1.0):
        assert np.array_equal(control.interpolate_plan(plan, t), [1, 2, 3, 4])


def test_linear_midpoint():
    plan = two_knot_plan("linear")
    assert np.allclose(control.interpolate_plan(plan, 0.5), [2, 0, 0, 0])
    # flat hold beyond the last knot
    assert np.allclose(control.interpolate_plan(plan, 1.7), [4, 0, 0, 0])


def test_zero_hold_left_closed():
    plan = two_knot_plan("zero")
    # a query exactly on a knot boundary selects the later knot
    assert np.allclose(control.interpolate_plan(plan, 1.0), [4, 0, 0, 0])
    assert np.allclose(control.interpolate_plan(plan, 1.0 - 1e-9), [0, 0, 0, 0])
    assert np.allclose(control.interpolate_plan(plan, 0.0), [0, 0, 0, 0])


def test_interpolate_rejects_outside_horizon():
    plan = two_knot_plan("zero")
    with pytest.raises(ValueError):
        control.interpolate_plan(plan, -0.5)
    with pytest.raises(ValueError):
        control.interpolate_plan(plan, 2.5)


@pytest.mark.parametrize("hold", ["zero", "linear"])
def test_interpolation_matrix_matches_pointwise(hold):
    rng = np.random.default_rng(4)
    values = rng.normal(scale=100, size=(8, 4))
    plan = control.ControlPlan(np.arange(8) * 0.25, values, t_f=2.0, hold=hold)
    dt = 0.05
    grid = control.plan_to_grid(plan, dt)
    for k, t in enumerate(np.arange(grid.shape[0]) * dt):
        assert np.allclose(grid[k], control.interpolate_plan(plan, t),
                           atol=1e-12)


def test_plan_validation():
    with pytest.raises(ValueError):
        control.ControlPlan(np.array([0.0, 0.5, 0.7]), np.zeros((3, 4)),
                            t_f=1.0)  # non-uniform spacing
    with pytest.raises(ValueError):
        control.ControlPlan(np.array([0.0, 1.0]), np.zeros((2, 4)), t_f=0.5)
    with pytest.raises(ValueError):
        control.ControlPlan(np.array([0.0]), np.zeros((1, 4)), t_f=1.0,
                            hold="cubic")
    with pytest.raises(ValueError):
        control.ControlPlan(np.array([0.0, 1.0]), np.full((2, 4), np.nan),
                            t_f=2.0)


def test_smooth_sat_oracles():
    assert np.all(control.smooth_sat(np.zeros(4), 400.0) == 0.0)
    big = control.smooth_sat(np.full(4, 1e6), 400.0)
    assert np.all(np.abs(big - 400.0) < 1e-6)
    out = control.smooth_sat(np.array([400.0, 0, 0, 0]), 400.0)
    assert abs(out[0] - 400.0 * np.tanh(1.0)) < 1e-12
    assert abs(out[0] - 304.64) < 0.01


def test_smooth_sat_properties():
    rng = np.random.default_rng(5)
    u = rng.normal(scale=1000, size=(100, 4))
    s = control.smooth_sat(u, 400.0)
    assert np.max(np.abs(s)) < 400.0
    assert np.allclose(control.smooth_sat(-u, 400.0), -s)
    # slope at the origin is 1, never exceeded
    tiny = control.smooth_sat(np.full(4, 1e-8), 400.0)
    assert np.allclose(tiny, 1e-8, rtol=1e-10)
    with pytest.raises(ValueError):
        control.smooth_sat(u, 0.0)


def test_feedback_gain_helpers():
    z = control.FeedbackGain.zero()
    assert z.is_zero()
    g = control.FeedbackGain.pd_default()
    assert not g.is_zero()
    assert np.array_equal(g.K_P, 800.0 * np.eye(4))
    assert np.array_equal(g.K_D, 80.0 * np.eye(4))


def test_feedback_pre_saturation_oracle(table_params):
    """Pure configuration error (0, 0.1, 0.1, 0) through K_P = 800 I gives a
    pre-saturation correction (0, 80, 80, 0)."""
    x0 = hover_state(table_params)
    plan = control.constant_plan(np.zeros(4), t_f=1.0)
    tgrid = stochastic.time_grid(0.05, 1.0)
    nominal = stochastic.Trajectory(tgrid, np.tile(x0, (tgrid.shape[0], 1)),
                                    np.zeros((tgrid.shape[0], 4)), True)
    x = x0.copy()
    x[model.I_R] -= 0.1
    x[model.I_L] -= 0.1
    gain = control.FeedbackGain.pd_default()
    mu = control.feedback_law(plan, nominal, x, 0.0, gain, table_params.u_max)
    expected = control.smooth_sat(np.array([0.0, 80.0, 80.0, 0.0]),
                                  table_params.u_max)
    assert np.allclose(mu, expected, atol=1e-12)


def test_feedback_law_reductions(table_params):
    x0 = hover_state(table_params)
    rng = np.random.default_rng(6)
    plan = control.constant_plan(rng.normal(scale=100, size=4), t_f=1.0)
    tgrid = stochastic.time_grid(0.05, 1.0)
    nominal = stochastic.Trajectory(tgrid, np.tile(x0, (tgrid.shape[0], 1)),
                                    np.zeros((tgrid.shape[0], 4)), True)
    sat_ff = control.smooth_sat(plan.knot_values[0], table_params.u_max)
    # on the nominal state the correction vanishes
    mu = control.feedback_law(plan, nominal, x0, 0.3,
                              control.FeedbackGain.pd_default(),
                              table_params.u_max)
    assert np.allclose(mu, sat_ff, atol=1e-12)
    # zero gains reduce to the saturated feedforward for any state
    x = x0 + rng.normal(size=12)
    mu = control.feedback_law(plan, nominal, x, 0.3,
                              control.FeedbackGain.zero(),
                              table_params.u_max)
    assert np.array_equal(mu, sat_ff)


def test_tracking_error_wraps_angle():
    a = np.zeros(12)
    b = np.zeros(12)
    a[model.I_THETA] = 3.0
    b[model.I_THETA] = -3.0
    e_q, e_v = control.tracking_error(a, b)
    # shortest way from 3 rad to -3 rad crosses pi
    assert abs(e_q[0] - (2 * np.pi - 6.0)) < 1e-12
    assert np.all(e_v == 0.0)


def test_plan_csv_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    plan = control.ControlPlan(np.arange(5) * 0.25,
                               rng.normal(scale=300, size=(5, 4)),
                               t_f=1.25, hold="linear")
    path = tmp_path / "plan.csv"
    control.save_plan(plan, path)
    back = control.load_plan(path)
    assert back.hold == "linear"
    assert back.t_f == plan.t_f
    assert np.array_equal(back.knot_times, plan.knot_times)
    assert np.array_equal(back.knot_values, plan.knot_values)


def test_load_plan_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,a,b,c,d\n0,0,0,0,0\n")
    with pytest.raises(ValueError):
        control.load_plan(str(path))
