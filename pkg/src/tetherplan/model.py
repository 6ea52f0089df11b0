"""Deterministic plant: planar dynamics of a winch-tethered underwater
vehicle (UUV) hanging from a surface vessel (USV).

Coordinates
-----------
q = (theta, r, l, X): swing angle of the tether from the vertical, polar
radius from the vessel anchor to the vehicle, paid tether length, and the
vessel's horizontal position. The tether is taut, so l follows r state-wise
(l_dot = r_dot always after propagation). Positions in the vertical plane:

    x = X - r*sin(theta)        horizontal vehicle position
    d = r*cos(theta)            depth, positive underwater

Full state (12,) ordering used everywhere in this package:

    [theta, r, l, X, theta_dot, r_dot, l_dot, X_dot, f_theta, f_r, f_l, f_X]

The last four entries are the realized actuator forces; commands u pass
through first-order lags f_dot = (u - f)/T per channel.

Acceleration structure: the vessel row depends only on (X_dot, f_X), so
X_ddot is computed first and substituted into the swing and radial rows;
no mass-matrix solve is needed.
"""

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

N_STATE = 12
N_INPUT = 4

STATE_NAMES = (
    "theta", "r", "l", "X",
    "theta_dot", "r_dot", "l_dot", "X_dot",
    "f_theta", "f_r", "f_l", "f_X",
)
INPUT_NAMES = ("u_theta", "u_r", "u_l", "u_X")

# state vector indices
I_THETA, I_R, I_L, I_X = 0, 1, 2, 3
I_THETA_DOT, I_R_DOT, I_L_DOT, I_X_DOT = 4, 5, 6, 7
I_F = slice(8, 12)

#: radius floor (m); propagation below this flags the trajectory invalid
R_MIN = 0.05


@dataclass
class ModelParams:
    """Physical constants. Field names double as config-file keys."""

    m: float = 120.0        # vehicle mass (kg)
    m_bar: float = 90.0     # apparent (buoyancy-corrected) vehicle mass (kg)
    M: float = 1075.0       # surface-vessel mass (kg)
    M_l: float = 30.0       # winch inertia expressed as equivalent mass (kg)
    g: float = 9.8          # gravitational acceleration (m/s^2)
    c_theta: float = 120.0  # quadratic drag, swing direction (N s^2/m^2)
    c_r: float = 120.0      # quadratic drag, radial direction (N s^2/m^2)
    c_l: float = 300.0      # linear winch payout damping (N s/m)
    c_X: float = 1000.0     # linear hull drag (N s/m)
    T_theta: float = 0.1    # actuator lag time constants (s)
    T_r: float = 0.1
    T_l: float = 0.5
    T_X: float = 1.0
    u_max: float = 400.0    # per-channel command bound (N)

    def validate(self):
        for name in ("m", "m_bar", "M", "M_l", "g", "c_theta", "c_r",
                     "c_l", "c_X", "T_theta", "T_r", "T_l", "T_X", "u_max"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0.0:
                raise ValueError(f"ModelParams.{name} must be finite and > 0, got {v!r}")
        return self

    def with_uncertain(self, xi) -> "ModelParams":
        """Return a copy with the uncertain plant entries overridden.

        xi provides (m, m_bar, c_theta, c_r); everything else is kept.
        """
        if xi is None:
            return self
        return replace(self, m=xi.m, m_bar=xi.m_bar,
                       c_theta=xi.c_theta, c_r=xi.c_r)

    def as_array(self, xi=None) -> np.ndarray:
        """Pack for the rollout kernels: [m, m_bar, M, M_l, g, c_theta,
        c_r, c_l, c_X, T_theta, T_r, T_l, T_X]."""
        p = self.with_uncertain(xi)
        return np.array([p.m, p.m_bar, p.M, p.M_l, p.g, p.c_theta, p.c_r,
                         p.c_l, p.c_X, p.T_theta, p.T_r, p.T_l, p.T_X])


class OutputY(NamedTuple):
    """Measured output: vehicle horizontal position, depth, vessel position."""

    x: float
    d: float
    X: float


@dataclass
class SystemState:
    """Named view of one state vector; arrays are the working representation."""

    theta: float = 0.0
    r: float = 1.0
    l: float = 1.0
    X: float = 0.0
    theta_dot: float = 0.0
    r_dot: float = 0.0
    l_dot: float = 0.0
    X_dot: float = 0.0
    f_theta: float = 0.0
    f_r: float = 0.0
    f_l: float = 0.0
    f_X: float = 0.0

    @classmethod
    def from_array(cls, arr) -> "SystemState":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (N_STATE,):
            raise ValueError(f"state must have shape ({N_STATE},), got {arr.shape}")
        return cls(*arr.tolist())

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.r, self.l, self.X,
                         self.theta_dot, self.r_dot, self.l_dot, self.X_dot,
                         self.f_theta, self.f_r, self.f_l, self.f_X])

    def validate(self):
        arr = self.as_array()
        if not np.all(np.isfinite(arr)):
            raise ValueError("state contains non-finite entries")
        if self.r <= 0.0:
            raise ValueError(f"polar radius must be > 0, got {self.r}")
        if not (-np.pi < self.theta <= np.pi):
            raise ValueError(f"theta must lie in (-pi, pi], got {self.theta}")
        return self


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return w if w.ndim else float(w)


def cartesian_from_polar(theta, r, X):
    """(theta, r, X) -> (x, d). Rejects nonpositive radius."""
    theta = np.asarray(theta, dtype=float)
    r = np.asarray(r, dtype=float)
    X = np.asarray(X, dtype=float)
    if np.any(r <= 0.0):
        raise ValueError("polar radius must be > 0")
    x = X - r * np.sin(theta)
    d = r * np.cos(theta)
    if x.ndim == 0:
        return float(x), float(d)
    return x, d


def polar_from_cartesian(x, d, X):
    """(x, d, X) -> (theta, r). Rejects the vehicle sitting on the anchor."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    X = np.asarray(X, dtype=float)
    r = np.hypot(X - x, d)
    if np.any(r <= 0.0):
        raise ValueError("vehicle coincides with the vessel anchor (r = 0)")
    theta = np.arctan2(X - x, d)
    if r.ndim == 0:
        return float(theta), float(r)
    return theta, r


def drag_forces(state, p: ModelParams, xi=None):
    """Hydrodynamic drag per channel, returned as (eta_X, eta_l, eta_theta, eta_r).

    The vehicle terms are quadratic in the relevant relative flow speed; the
    vessel hull and winch payout terms are linear.
    """
    p = p.with_uncertain(xi)
    s = np.asarray(state, dtype=float)
    theta, r = s[I_THETA], s[I_R]
    om, vr, vl, V = s[I_THETA_DOT], s[I_R_DOT], s[I_L_DOT], s[I_X_DOT]
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    w_theta = V * cos_t + r * om
    w_r = V * sin_t + vr
    eta_X = p.c_X * V
    eta_l = p.c_l * vl
    eta_theta = p.c_theta * abs(w_theta) * w_theta
    eta_r = p.c_r * abs(w_r) * w_r
    return eta_X, eta_l, eta_theta, eta_r


def drift(state, u, p: ModelParams, xi=None) -> np.ndarray:
    """Continuous-time state derivative b(state, u).

    The vessel acceleration is resolved first and substituted into the swing
    and radial rows; the tether row copies the radial acceleration (taut
    tether). Input enters only through the actuator-lag rows, so the drift is
    affine in u.
    """
    p = p.with_uncertain(xi)
    s = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    theta, r = s[I_THETA], s[I_R]
    if r <= 0.0:
        raise ValueError("polar radius must be > 0")
    om, vr, vl, V = s[I_THETA_DOT], s[I_R_DOT], s[I_L_DOT], s[I_X_DOT]
    f_theta, f_r, f_l, f_X = s[I_F]
    sin_t, cos_t = np.sin(theta), np.cos(theta)

    a_X = (f_X - p.c_X * V) / p.M
    w_theta = V * cos_t + r * om
    w_r = V * sin_t + vr
    eta_theta = p.c_theta * abs(w_theta) * w_theta
    eta_r = p.c_r * abs(w_r) * w_r

    a_theta = (p.m * a_X * cos_t - 2.0 * p.m * vr * om
               - p.m_bar * p.g * sin_t - eta_theta + f_theta) / (p.m * r)
    a_r = (p.m * a_X * sin_t + p.m * r * om * om + p.m_bar * p.g * cos_t
           - eta_r - p.c_l * vr + f_r + f_l) / (p.m + p.M_l)

    return np.array([
        om, vr, vl, V,
        a_theta, a_r, a_r, a_X,
        (u[0] - f_theta) / p.T_theta,
        (u[1] - f_r) / p.T_r,
        (u[2] - f_l) / p.T_l,
        (u[3] - f_X) / p.T_X,
    ])


def output(state) -> np.ndarray:
    """Map state(s) to measured output (x, d, X); broadcasts over leading axes."""
    s = np.asarray(state, dtype=float)
    theta = s[..., I_THETA]
    r = s[..., I_R]
    X = s[..., I_X]
    y = np.stack([X - r * np.sin(theta), r * np.cos(theta), X], axis=-1)
    return y


def output_point(state) -> OutputY:
    y = output(state)
    return OutputY(float(y[0]), float(y[1]), float(y[2]))


def mechanical_energy(state, p: ModelParams, xi=None) -> float:
    """Vehicle + vessel mechanical energy: kinetic in Cartesian vehicle
    velocity plus vessel kinetic, minus apparent-weight potential m_bar*g*d.
    Test oracle for the conservative (zero-drag, constrained-radius) limit.
    """
    p = p.with_uncertain(xi)
    s = np.asarray(state, dtype=float)
    theta, r = s[I_THETA], s[I_R]
    om, vr, V = s[I_THETA_DOT], s[I_R_DOT], s[I_X_DOT]
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    x_dot = V - vr * sin_t - r * om * cos_t
    d_dot = vr * cos_t - r * om * sin_t
    d = r * cos_t
    return float(0.5 * p.m * (x_dot ** 2 + d_dot ** 2)
                 + 0.5 * p.M * V ** 2
                 - p.m_bar * p.g * d)
