import numpy as np
import pytest

from conftest import hover_state
from tetherplan import model


def test_cartesian_from_polar_oracles():
    assert model.cartesian_from_polar(0.0, 2.0, 5.0) == (5.0, 2.0)
    x, d = model.cartesian_from_polar(np.pi / 2, 1.0, 0.0)
    assert abs(x - (-1.0)) < 1e-12
    assert abs(d) < 1e-12
    x, d = model.cartesian_from_polar(np.pi / 6, 2.0, 1.0)
    assert abs(x) < 1e-12
    assert abs(d - np.sqrt(3.0)) < 1e-12


def test_polar_from_cartesian_oracles():
    assert model.polar_from_cartesian(5.0, 2.0, 5.0) == (0.0, 2.0)
    th, r = model.polar_from_cartesian(-1.0, 0.0, 0.0)
    assert abs(th - np.pi / 2) < 1e-12 and abs(r - 1.0) < 1e-12
    th, r = model.polar_from_cartesian(0.0, np.sqrt(3.0), 1.0)
    assert abs(th - np.pi / 6) < 1e-12 and abs(r - 2.0) < 1e-12


def test_polar_round_trip_identity():
    rng = np.random.default_rng(0)
    theta = rng.uniform(-np.pi, np.pi, 500)
    theta[theta == -np.pi] = np.pi
    r = np.exp(rng.uniform(np.log(0.1), np.log(100.0), 500))
    X = rng.uniform(-50, 50, 500)
    x, d = model.cartesian_from_polar(theta, r, X)
    th2, r2 = model.polar_from_cartesian(x, d, X)
    assert np.max(np.abs(r2 - r) / r) < 1e-12
    assert np.max(np.abs(model.wrap_angle(th2 - theta))) < 1e-12


def test_radius_rejected_at_zero():
    with pytest.raises(ValueError):
        model.cartesian_from_polar(0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        model.polar_from_cartesian(1.0, 0.0, 1.0)


def test_drag_zero_at_rest(table_params):
    s = hover_state(table_params)
    assert model.drag_forces(s, table_params) == (0.0, 0.0, 0.0, 0.0)


def test_drag_oracles(table_params):
    s = hover_state(table_params)
    s[model.I_X_DOT] = 2.0
    eta_X, eta_l, eta_theta, eta_r = model.drag_forces(s, table_params)
    assert abs(eta_X - 2000.0) < 1e-12
    # theta=0: the relative swing flow is V*cos(0) + r*omega = 2, quadratic drag
    assert abs(eta_theta - 120.0 * 2.0 * 2.0) < 1e-12

    s = hover_state(table_params)
    s[model.I_THETA_DOT] = 1.0
    eta_X, eta_l, eta_theta, eta_r = model.drag_forces(s, table_params)
    assert eta_X == 0.0
    assert abs(eta_theta - 480.0) < 1e-12
    assert eta_r == 0.0


def test_hover_is_fixed_point(table_params):
    s = hover_state(table_params)
    u = s[model.I_F].copy()
    b = model.drift(s, u, table_params)
    assert np.max(np.abs(b)) < 1e-9


def test_free_sink_oracle(table_params):
    s = hover_state(table_params)
    s[model.I_F] = 0.0
    b = model.drift(s, np.zeros(4), table_params)
    assert np.all(b[:4] == 0.0)  # position rates are the (zero) velocities
    r_dd = b[5]
    assert abs(r_dd - 882.0 / 150.0) < 1e-9
    assert abs(r_dd - 5.88) < 1e-9
    assert abs(b[4]) < 1e-12   # theta_dd
    assert abs(b[7]) < 1e-12   # X_dd
    assert abs(b[6] - b[5]) < 1e-12  # taut tether: l_dd == r_dd


def test_usv_push_oracle(table_params):
    s = hover_state(table_params)
    s[model.I_F] = np.array([0.0, 0.0, 0.0, 1000.0])
    b = model.drift(s, np.zeros(4), table_params)
    assert abs(b[7] - 1000.0 / 1075.0) < 1e-12


def test_drift_affine_in_input(table_params):
    rng = np.random.default_rng(1)
    for _ in range(20):
        s = rng.normal(size=12)
        s[model.I_R] = abs(s[model.I_R]) + 0.5
        u1, u2 = rng.normal(scale=200, size=(2, 4))
        a, bco = 0.7, -1.3
        b0 = model.drift(s, np.zeros(4), table_params)
        lhs = model.drift(s, a * u1 + bco * u2, table_params) - b0
        rhs = (a * (model.drift(s, u1, table_params) - b0)
               + bco * (model.drift(s, u2, table_params) - b0))
        assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_drift_odd_symmetry(table_params):
    rng = np.random.default_rng(2)
    for _ in range(20):
        s = rng.normal(size=12)
        s[model.I_R] = abs(s[model.I_R]) + 0.5
        u = rng.normal(scale=100, size=4)
        sm = s.copy()
        um = u.copy()
        for i in (model.I_THETA, model.I_THETA_DOT, model.I_X_DOT, 8, 11):
            sm[i] = -sm[i]
        um[0], um[3] = -um[0], -um[3]
        b = model.drift(s, u, table_params)
        bm = model.drift(sm, um, table_params)
        # theta/X rows flip, radial rows unchanged
        for i in (0, 3, 4, 7, 8, 11):
            assert abs(bm[i] + b[i]) < 1e-10
        for i in (1, 2, 5, 6, 9, 10):
            assert abs(bm[i] - b[i]) < 1e-10


def test_output_oracles(table_params):
    s = hover_state(table_params, r=2.0, X=0.0)
    assert np.allclose(model.output(s), [0.0, 2.0, 0.0], atol=1e-12)
    s = np.zeros(12)
    s[model.I_THETA], s[model.I_R] = np.pi / 2, 1.0
    assert np.allclose(model.output(s), [-1.0, 0.0, 0.0], atol=1e-12)
    s[model.I_THETA], s[model.I_R], s[model.I_X] = np.pi / 6, 2.0, 1.0
    assert np.allclose(model.output(s), [0.0, np.sqrt(3.0), 1.0], atol=1e-12)
    assert model.output_point(s).d == pytest.approx(np.sqrt(3.0))


def test_output_broadcasts():
    rng = np.random.default_rng(3)
    batch = rng.normal(size=(5, 7, 12))
    batch[..., model.I_R] = np.abs(batch[..., model.I_R]) + 0.1
    y = model.output(batch)
    assert y.shape == (5, 7, 3)
    assert np.allclose(y[2, 3], model.output(batch[2, 3]))


def test_mechanical_energy_oracles(table_params):
    s = np.zeros(12)
    s[model.I_THETA], s[model.I_R] = np.pi / 2, 1.0  # d = 0
    assert abs(model.mechanical_energy(s, table_params)) < 1e-12

    s = hover_state(table_params, r=2.0)
    s[model.I_F] = 0.0
    assert abs(model.mechanical_energy(s, table_params) + 1764.0) < 1e-12

    s = np.zeros(12)
    s[model.I_THETA], s[model.I_R] = np.pi / 2, 1.0
    s[model.I_R_DOT] = 1.0
    s[model.I_L_DOT] = 1.0
    # theta = pi/2 keeps d = 0; radial rate maps to x_dot = -1, d_dot = 0
    assert abs(model.mechanical_energy(s, table_params) - 60.0) < 1e-12


def _frozen_pendulum_energy_error(dt: float, t_f: float = 10.0) -> float:
    """Max energy drift of the zero-drag pendulum with the radial row
    cancelled each step (frozen tether)."""
    p = model.ModelParams(c_theta=0.0, c_r=0.0, c_l=0.0, c_X=0.0)
    s = np.zeros(12)
    s[model.I_THETA], s[model.I_R], s[model.I_L] = 0.5, 2.0, 2.0
    e0 = model.mechanical_energy(s, p)
    worst = 0.0
    for _ in range(int(round(t_f / dt))):
        th, r = s[model.I_THETA], s[model.I_R]
        om = s[model.I_THETA_DOT]
        # f_r cancels the gravity + centrifugal radial forcing exactly
        s[9] = -(p.m * r * om * om + p.m_bar * p.g * np.cos(th))
        b = model.drift(s, np.zeros(4), p)
        assert abs(b[5]) < 1e-9
        s = s + dt * b
        s[model.I_F] = 0.0
        worst = max(worst, abs(model.mechanical_energy(s, p) - e0))
    return worst


def test_energy_error_halves_with_dt():
    err_full = _frozen_pendulum_energy_error(0.05)
    err_half = _frozen_pendulum_energy_error(0.025)
    assert err_full > 0
    assert err_half <= 0.5 * err_full


def test_hover_propagation_stays_fixed(table_params):
    s = hover_state(table_params)
    u = s[model.I_F].copy()
    x = s.copy()
    for _ in range(200):
        x = x + 0.05 * model.drift(x, u, table_params)
    assert np.max(np.abs(x - s)) < 1e-9


def test_params_validate():
    with pytest.raises(ValueError):
        model.ModelParams(m=-1.0).validate()
    with pytest.raises(ValueError):
        model.ModelParams(c_X=0.0).validate()
    with pytest.raises(ValueError):
        model.ModelParams(T_l=np.inf).validate()
    model.ModelParams().validate()


def test_params_as_array_and_override():
    p = model.ModelParams()
    arr = p.as_array()
    assert arr.shape == (13,)
    assert arr[0] == 120.0 and arr[4] == 9.8 and arr[8] == 1000.0

    class Xi:
        m, m_bar, c_theta, c_r = 100.0, 80.0, 110.0, 130.0

    q = p.with_uncertain(Xi())
    assert (q.m, q.m_bar, q.c_theta, q.c_r) == (100.0, 80.0, 110.0, 130.0)
    assert q.M == p.M and q.u_max == p.u_max


def test_state_validate():
    st = model.SystemState(theta=4.0)
    with pytest.raises(ValueError):
        st.validate()
    with pytest.raises(ValueError):
        model.SystemState(r=0.0).validate()
    arr = model.SystemState(theta=0.1, r=2.0).validate().as_array()
    assert model.SystemState.from_array(arr).theta == 0.1


def test_wrap_angle():
    assert model.wrap_angle(np.pi) == np.pi
    assert model.wrap_angle(-np.pi) == np.pi
    assert abs(model.wrap_angle(3 * np.pi / 2) + np.pi / 2) < 1e-12
    assert model.wrap_angle(0.3) == pytest.approx(0.3)
