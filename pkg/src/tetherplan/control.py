"""Control plans (piecewise feedforward), smooth saturation, and the PD
correction law shared by the planner and the online executor.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .model import N_INPUT, INPUT_NAMES, wrap_angle

HOLD_MODES = ("zero", "linear")


@dataclass
class ControlPlan:
    """Feedforward input on uniform knots over [0, t_f].

    hold = "zero": left-closed hold intervals, a query exactly on a knot time
    returns that knot. hold = "linear": interpolation between bracketing
    knots, held flat past the last knot.
    """

    knot_times: np.ndarray
    knot_values: np.ndarray  # (n_knots, 4)
    t_f: float
    hold: str = "zero"

    def __post_init__(self):
        self.knot_times = np.asarray(self.knot_times, dtype=float)
        self.knot_values = np.asarray(self.knot_values, dtype=float)
        self.validate()

    def validate(self):
        n = self.knot_times.shape[0]
        if n < 1 or self.knot_values.shape != (n, N_INPUT):
            raise ValueError("knot arrays inconsistent: "
                             f"{self.knot_times.shape} vs {self.knot_values.shape}")
        if self.hold not in HOLD_MODES:
            raise ValueError(f"hold must be one of {HOLD_MODES}, got {self.hold!r}")
        if not np.all(np.isfinite(self.knot_times)) or not np.all(np.isfinite(self.knot_values)):
            raise ValueError("plan contains non-finite entries")
        if not (np.isfinite(self.t_f) and self.t_f > 0):
            raise ValueError(f"t_f must be > 0, got {self.t_f}")
        if self.knot_times[0] < -1e-12 or self.knot_times[-1] > self.t_f + 1e-9:
            raise ValueError("knots must lie inside [0, t_f]")
        if n > 1:
            gaps = np.diff(self.knot_times)
            if np.any(gaps <= 0):
                raise ValueError("knot times must be strictly increasing")
            if np.ptp(gaps) > 1e-9 * max(1.0, gaps[0]):
                raise ValueError("knot spacing must be uniform")
        return self

    @property
    def n_knots(self) -> int:
        return self.knot_times.shape[0]


def constant_plan(u, t_f, knot_dt=0.25, hold="zero") -> ControlPlan:
    """Plan holding a single input value over [0, t_f] on a uniform knot grid."""
    u = np.asarray(u, dtype=float)
    n = max(1, int(round(t_f / knot_dt)))
    times = np.arange(n) * knot_dt
    return ControlPlan(times, np.tile(u, (n, 1)), t_f=t_f, hold=hold)


def _knot_index_zero_hold(plan: ControlPlan, t):
    # left-closed intervals: a query on a knot time selects that knot
    idx = np.searchsorted(plan.knot_times, np.asarray(t) + 1e-12, side="right") - 1
    return np.clip(idx, 0, plan.n_knots - 1)


def interpolate_plan(plan: ControlPlan, t: float) -> np.ndarray:
    """Feedforward input at time t; rejects queries outside [0, t_f]."""
    if not (-1e-9 <= t <= plan.t_f + 1e-9):
        raise ValueError(f"t = {t} outside plan horizon [0, {plan.t_f}]")
    if plan.hold == "zero" or plan.n_knots == 1:
        return plan.knot_values[int(_knot_index_zero_hold(plan, t))].copy()
    out = np.empty(N_INPUT)
    for j in range(N_INPUT):
        out[j] = np.interp(t, plan.knot_times, plan.knot_values[:, j])
    return out


def interpolation_matrix(plan: ControlPlan, dt: float) -> np.ndarray:
    """Matrix P with u(t_k) = (P @ knot_values)[k] on the uniform step grid.

    Row k holds the interpolation weights for grid time k*dt; the adjoint of
    plan-to-grid expansion is then just P.T. Grid covers [0, t_f] inclusive.
    """
    n_steps = int(round(plan.t_f / dt))
    if abs(n_steps * dt - plan.t_f) > 1e-9:
        raise ValueError(f"t_f = {plan.t_f} is not a multiple of dt = {dt}")
    tgrid = np.arange(n_steps + 1) * dt
    P = np.zeros((n_steps + 1, plan.n_knots))
    if plan.hold == "zero" or plan.n_knots == 1:
        idx = _knot_index_zero_hold(plan, tgrid)
        P[np.arange(n_steps + 1), idx] = 1.0
    else:
        kt = plan.knot_times
        idx = np.clip(np.searchsorted(kt, tgrid, side="right") - 1, 0, plan.n_knots - 2)
        w = (tgrid - kt[idx]) / (kt[idx + 1] - kt[idx])
        w = np.clip(w, 0.0, 1.0)  # flat hold beyond the last knot
        P[np.arange(n_steps + 1), idx] = 1.0 - w
        P[np.arange(n_steps + 1), idx + 1] += w
    return P


def plan_to_grid(plan: ControlPlan, dt: float) -> np.ndarray:
    """Expand the plan to the (n_steps+1, 4) feedforward table on the dt grid."""
    return interpolation_matrix(plan, dt) @ plan.knot_values


@dataclass
class FeedbackGain:
    """PD correction gains on the configuration block and its rates; the
    force block of the state gets no direct correction."""

    K_P: np.ndarray = field(default_factory=lambda: np.zeros((4, 4)))
    K_D: np.ndarray = field(default_factory=lambda: np.zeros((4, 4)))

    def __post_init__(self):
        self.K_P = np.asarray(self.K_P, dtype=float).reshape(4, 4)
        self.K_D = np.asarray(self.K_D, dtype=float).reshape(4, 4)
        if not (np.all(np.isfinite(self.K_P)) and np.all(np.isfinite(self.K_D))):
            raise ValueError("gains must be finite")

    @classmethod
    def pd_default(cls, kp=800.0, kd=80.0) -> "FeedbackGain":
        return cls(np.eye(4) * kp, np.eye(4) * kd)

    @classmethod
    def zero(cls) -> "FeedbackGain":
        return cls()

    def is_zero(self) -> bool:
        return not (np.any(self.K_P) or np.any(self.K_D))


def smooth_sat(u, u_max: float):
    """Componentwise smooth saturation u_max*tanh(u/u_max).

    Odd, strictly inside (-u_max, u_max), slope 1 at the origin.
    """
    if u_max <= 0:
        raise ValueError("u_max must be > 0")
    u = np.asarray(u, dtype=float)
    return u_max * np.tanh(u / u_max)


def tracking_error(state, reference_state):
    """(q, q_dot) error of reference minus state with the angle wrapped."""
    e = np.asarray(reference_state, dtype=float)[:8] - np.asarray(state, dtype=float)[:8]
    e[0] = wrap_angle(e[0])
    return e[:4], e[4:8]


def feedback_law(plan: ControlPlan, nominal, x, t: float,
                 K: FeedbackGain, u_max: float) -> np.ndarray:
    """Applied input: saturated feedforward plus PD correction toward the
    nominal trajectory state at time t.

    `nominal` is a Trajectory whose grid must contain t (its states are the
    correction reference). With K = 0 this reduces exactly to the saturated
    open-loop plan.
    """
    k = nominal.index_at(t)
    e_q, e_v = tracking_error(np.asarray(x, dtype=float), nominal.states[k])
    pre = interpolate_plan(plan, t) + K.K_P @ e_q + K.K_D @ e_v
    return smooth_sat(pre, u_max)


def save_plan(plan: ControlPlan, csv_path):
    """Write knots as CSV plus a JSON sidecar carrying hold mode and t_f."""
    csv_path = str(csv_path)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + list(INPUT_NAMES))
        for t, row in zip(plan.knot_times, plan.knot_values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    with open(_sidecar_path(csv_path), "w") as fh:
        json.dump({"hold": plan.hold, "t_f": plan.t_f}, fh, indent=2)
        fh.write("\n")


def load_plan(csv_path) -> ControlPlan:
    csv_path = str(csv_path)
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["t"] + list(INPUT_NAMES):
        raise ValueError(f"{csv_path}: bad plan header {rows[0] if rows else '(empty)'}")
    data = np.array([[float(v) for v in row] for row in rows[1:]])
    if data.size == 0:
        raise ValueError(f"{csv_path}: plan has no knots")
    with open(_sidecar_path(csv_path)) as fh:
        side = json.load(fh)
    return ControlPlan(data[:, 0], data[:, 1:], t_f=float(side["t_f"]),
                       hold=str(side["hold"]))


def _sidecar_path(csv_path: str) -> str:
    base = csv_path[:-4] if csv_path.endswith(".csv") else csv_path
    return base + ".json"
