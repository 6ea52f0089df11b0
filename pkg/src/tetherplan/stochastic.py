"""Uncertainty sampling, Euler-Maruyama propagation, and rollout drivers.

Plant uncertainty covers (m, m_bar, c_theta, c_r) plus the obstacle set;
samples are drawn around the spec's expected values and stay fixed across
plan evaluations (common random numbers). Process noise enters as additive
pre-scaled Wiener increments through a constant gain matrix.
"""

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import model
from .control import ControlPlan, FeedbackGain, plan_to_grid
from ._kernels import rollout_closed_loop

_PLANT_FIELDS = ("m", "m_bar", "c_theta", "c_r")

TRAJECTORY_CSV_HEADER = (
    "t,theta,r,l,X,theta_dot,r_dot,l_dot,X_dot,"
    "f_theta,f_r,f_l,f_X,x,d,u_theta,u_r,u_l,u_X,valid"
)


@dataclass
class UncertainParams:
    """One realization of the uncertain plant entries and the obstacle set.

    obstacles: (n_obs, 3) array of rows (x_O, d_O, a_O).
    """

    m: float = 120.0
    m_bar: float = 90.0
    c_theta: float = 120.0
    c_r: float = 120.0
    obstacles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.obstacles = np.asarray(self.obstacles, dtype=float).reshape(-1, 3)

    def validate(self):
        for name in _PLANT_FIELDS:
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"UncertainParams.{name} must be finite and > 0")
        if self.obstacles.size:
            if np.any(~np.isfinite(self.obstacles)):
                raise ValueError("obstacle entries must be finite")
            if np.any(self.obstacles[:, 1] <= 0) or np.any(self.obstacles[:, 2] <= 0):
                raise ValueError("obstacle depth and radius must be > 0")
        return self


@dataclass
class UncertaintySpec:
    """Distribution of UncertainParams around its expected values.

    epsilon scales the plant-parameter half-widths relative to the means;
    obstacle position/size get their own fixed relative observation errors.
    """

    epsilon: float = 0.0
    mean_m: float = 120.0
    mean_m_bar: float = 90.0
    mean_c_theta: float = 120.0
    mean_c_r: float = 120.0
    mean_obstacles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    obstacle_pos_rel_err: float = 0.30
    obstacle_size_rel_err: float = 0.10
    kind: str = "uniform"

    def __post_init__(self):
        self.mean_obstacles = np.asarray(self.mean_obstacles, dtype=float).reshape(-1, 3)

    def validate(self):
        if not (np.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ValueError("epsilon must be >= 0")
        for name in ("obstacle_pos_rel_err", "obstacle_size_rel_err"):
            v = getattr(self, name)
            if not (0 <= v < 1):
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.kind not in ("uniform", "gaussian"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "uniform" and self.epsilon >= 1:
            raise ValueError("epsilon >= 1 admits non-positive plant parameters")
        for name in ("mean_m", "mean_m_bar", "mean_c_theta", "mean_c_r"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.mean_obstacles.size and (np.any(self.mean_obstacles[:, 1] <= 0)
                                         or np.any(self.mean_obstacles[:, 2] <= 0)):
            raise ValueError("expected obstacle depth and radius must be > 0")
        return self

    def with_obstacles(self, obstacles) -> "UncertaintySpec":
        return replace(self, mean_obstacles=np.asarray(obstacles, dtype=float).reshape(-1, 3))


def expected_xi(spec: UncertaintySpec) -> UncertainParams:
    """Expectation of every uncertain entry (centers of the distributions)."""
    return UncertainParams(spec.mean_m, spec.mean_m_bar, spec.mean_c_theta,
                           spec.mean_c_r, spec.mean_obstacles.copy())


def _draw_rel(rng, mean, rel, kind, positive):
    """mean*(1 + rel*unit-noise); gaussian kind resamples until valid."""
    if rel == 0.0:
        return float(mean)
    if kind == "uniform":
        return float(mean * (1.0 + rel * rng.uniform(-1.0, 1.0)))
    for _ in range(1000):
        v = float(mean * (1.0 + rel * rng.standard_normal()))
        if not positive or v > 0:
            return v
    raise RuntimeError("gaussian resampling failed to produce a positive value")


def sample_xi(spec: UncertaintySpec, seed) -> UncertainParams:
    """One realization, deterministic in the seed."""
    spec.validate()
    rng = np.random.default_rng(seed)
    plant = [
        _draw_rel(rng, m, spec.epsilon, spec.kind, positive=True)
        for m in (spec.mean_m, spec.mean_m_bar, spec.mean_c_theta, spec.mean_c_r)
    ]
    obstacles = np.empty_like(spec.mean_obstacles)
    for i, (ox, od, oa) in enumerate(spec.mean_obstacles):
        obstacles[i, 0] = _draw_rel(rng, ox, spec.obstacle_pos_rel_err, spec.kind, positive=False)
        obstacles[i, 1] = _draw_rel(rng, od, spec.obstacle_pos_rel_err, spec.kind, positive=True)
        obstacles[i, 2] = _draw_rel(rng, oa, spec.obstacle_size_rel_err, spec.kind, positive=True)
    return UncertainParams(*plant, obstacles)


@dataclass
class DiffusionSpec:
    """Constant gain on the Wiener increments."""

    D: np.ndarray = field(default_factory=lambda: np.zeros((12, 12)))

    def __post_init__(self):
        self.D = np.asarray(self.D, dtype=float).reshape(12, 12)
        if np.any(~np.isfinite(self.D)):
            raise ValueError("diffusion gain must be finite")

    @classmethod
    def velocity_default(cls, intensity=0.01) -> "DiffusionSpec":
        """Diagonal gain acting on the four velocity rows only."""
        D = np.zeros((12, 12))
        for i in (model.I_THETA_DOT, model.I_R_DOT, model.I_L_DOT, model.I_X_DOT):
            D[i, i] = intensity
        return cls(D)

    def is_zero(self) -> bool:
        return not np.any(self.D)


@dataclass
class NoiseRealization:
    """Per-step Wiener increments, N(0, dt*I) rows, reproducible from seed."""

    increments: np.ndarray  # (n_steps, 12)
    seed: object = None

    def __post_init__(self):
        self.increments = np.asarray(self.increments, dtype=float)
        if self.increments.ndim != 2 or self.increments.shape[1] != 12:
            raise ValueError("increments must have shape (n_steps, 12)")


def make_noise(seed, n_steps: int, dt: float) -> NoiseRealization:
    rng = np.random.default_rng(seed)
    return NoiseRealization(rng.standard_normal((n_steps, 12)) * np.sqrt(dt), seed)


def zero_noise(n_steps: int) -> NoiseRealization:
    return NoiseRealization(np.zeros((n_steps, 12)), None)


def draw_sample_set(spec: UncertaintySpec, n: int, seed, n_steps: int, dt: float):
    """Frozen list of (UncertainParams, NoiseRealization) pairs for SAA use."""
    children = np.random.SeedSequence(seed).spawn(n)
    out = []
    for child in children:
        xi_seed, noise_seed = child.spawn(2)
        out.append((sample_xi(spec, xi_seed), make_noise(noise_seed, n_steps, dt)))
    return out


@dataclass
class Trajectory:
    """Uniform-grid rollout record: states, applied inputs, validity."""

    t: np.ndarray            # (T+1,)
    states: np.ndarray       # (T+1, 12)
    controls: np.ndarray     # (T+1, 4) applied (post-saturation) inputs
    valid: bool = True

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float)
        n = self.t.shape[0]
        if self.states.shape != (n, 12) or self.controls.shape != (n, 4):
            raise ValueError("trajectory arrays have inconsistent lengths")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.shape[0] > 1 else 0.0

    @property
    def t_f(self) -> float:
        return float(self.t[-1])

    def outputs(self) -> np.ndarray:
        return model.output(self.states)

    def forces(self) -> np.ndarray:
        return self.states[:, 8:12]

    def index_at(self, time: float) -> int:
        k = int(round((time - self.t[0]) / self.dt)) if self.t.shape[0] > 1 else 0
        if k < 0 or k >= self.t.shape[0] or abs(self.t[k] - time) > 1e-9:
            raise ValueError(f"time {time} is not on the trajectory grid")
        return k

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(TRAJECTORY_CSV_HEADER.split(","))
        y = self.outputs()
        flag = "1" if self.valid else "0"
        for k in range(self.t.shape[0]):
            s = self.states[k]
            row = [self.t[k],
                   model.wrap_angle(s[0]), s[1], s[2], s[3],
                   s[4], s[5], s[6], s[7], s[8], s[9], s[10], s[11],
                   y[k, 0], y[k, 1],
                   self.controls[k, 0], self.controls[k, 1],
                   self.controls[k, 2], self.controls[k, 3]]
            w.writerow([repr(float(v)) for v in row] + [flag])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != TRAJECTORY_CSV_HEADER.split(","):
            raise ValueError(f"{path}: bad trajectory header")
        data = np.array([[float(v) for v in row] for row in rows[1:]])
        if data.size == 0:
            raise ValueError(f"{path}: empty trajectory")
        t = data[:, 0]
        states = np.concatenate([data[:, 1:5], data[:, 5:9], data[:, 9:13]], axis=1)
        controls = data[:, 15:19]
        valid = bool(data[0, 19] >= 0.5)
        return cls(t, states, controls, valid)


def time_grid(dt: float, t_f: float) -> np.ndarray:
    n = int(round(t_f / dt))
    if n < 1 or abs(n * dt - t_f) > 1e-9:
        raise ValueError(f"t_f = {t_f} must be a positive multiple of dt = {dt}")
    return np.arange(n + 1) * dt


def default_initial_state(y0, params: model.ModelParams) -> np.ndarray:
    """State at rest at output y0 = (x, d, X) with the winch channel
    preloaded to carry the apparent weight (matches the planner's initial
    guess convention)."""
    theta, r = model.polar_from_cartesian(y0[0], y0[1], y0[2])
    x0 = np.zeros(12)
    x0[model.I_THETA] = theta
    x0[model.I_R] = r
    x0[model.I_L] = r
    x0[model.I_X] = y0[2]
    x0[10] = -params.m_bar * params.g  # f_l
    return x0


def em_step(state, u, params: model.ModelParams, dt: float, dW,
            xi: UncertainParams = None, diffusion: DiffusionSpec = None):
    """One Euler-Maruyama step; the tether-rate row is re-synced to the
    radial rate afterwards. Returns the new state array."""
    state = np.asarray(state, dtype=float)
    b = model.drift(state, u, params, xi)
    nxt = state + dt * b
    if diffusion is not None and dW is not None:
        nxt = nxt + diffusion.D @ np.asarray(dW, dtype=float)
    nxt[model.I_L_DOT] = nxt[model.I_R_DOT]
    return nxt


def nominal_rollout(plan: ControlPlan, params: model.ModelParams, dt: float,
                    t_f: float, x0, uspec: UncertaintySpec = None) -> Trajectory:
    """Deterministic rollout under expected parameters and zero noise with
    the saturated feedforward applied open-loop."""
    xi = expected_xi(uspec) if uspec is not None else None
    return rollout_from(x0, plan, None, FeedbackGain.zero(), params, dt, t_f,
                        noise=None, xi=xi, diffusion=None)


def closed_loop_rollout(plan: ControlPlan, nominal: Trajectory, K: FeedbackGain,
                        params: model.ModelParams, dt: float, t_f: float,
                        noise: NoiseRealization = None,
                        xi: UncertainParams = None,
                        diffusion: DiffusionSpec = None) -> Trajectory:
    """Single stochastic rollout applying sat(feedforward + PD correction
    toward the nominal trajectory), started from the nominal's initial
    state. With K = 0 the correction adds exact zeros and the result is the
    saturated open-loop rollout, bit for bit."""
    if abs(nominal.t_f - t_f) > 1e-9:
        raise ValueError("nominal horizon does not match t_f")
    return rollout_from(nominal.states[0], plan, nominal, K, params, dt, t_f,
                        noise=noise, xi=xi, diffusion=diffusion)


def rollout_from(x0, plan: ControlPlan, nominal, K: FeedbackGain,
                 params: model.ModelParams, dt: float, t_f: float,
                 noise: NoiseRealization = None,
                 xi: UncertainParams = None,
                 diffusion: DiffusionSpec = None) -> Trajectory:
    """closed_loop_rollout from an explicit initial state (the general entry
    point; the nominal may be None for open-loop runs)."""
    tgrid = time_grid(dt, t_f)
    n_steps = tgrid.shape[0] - 1
    uff = plan_to_grid(plan, dt)
    xnom = np.zeros((n_steps + 1, 12)) if nominal is None else nominal.states
    if nominal is not None and nominal.t.shape[0] != n_steps + 1:
        raise ValueError("nominal trajectory grid does not match the rollout grid")
    if noise is None or diffusion is None or diffusion.is_zero():
        add = np.zeros((1, n_steps, 12))
    else:
        if noise.increments.shape[0] != n_steps:
            raise ValueError("noise increment count does not match the grid")
        add = (noise.increments @ diffusion.D.T)[None, :, :]
    states, mu, ok = rollout_closed_loop(
        np.asarray(x0, dtype=float), uff, xnom, K.K_P, K.K_D, params.u_max,
        params.as_array(xi)[None, :], add, dt, model.R_MIN)
    return Trajectory(tgrid, states[0], mu[0], bool(ok[0]))
