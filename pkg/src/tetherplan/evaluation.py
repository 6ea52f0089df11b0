"""Monte-Carlo benchmark harness.

Scenario geometry (start, target, true and observed obstacles) is drawn
once per location index; model-uncertainty episodes re-draw the plant
parameters and process noise. Every method sees the same observed
obstacles, plans once per (scenario, epsilon), and is replayed against the
same per-episode truth draws, so the comparison isolates the controller.
Metrics are always scored against the true obstacles.
"""

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import baselines, model, optimizer, stochastic
from .control import FeedbackGain
from .stochastic import Trajectory

RESULT_CSV_HEADER = "method,i,j,epsilon,rho_final,rho_collision,rho_energy,valid"
METRIC_NAMES = ("rho_final", "rho_collision", "rho_energy")
DEFAULT_METHODS = ("saa_fb", "saa", "astar_pid_cbf", "mppi")
# sentinel for episodes that never produced a usable trajectory: the arena
# diagonal for the final error, certain collision
INVALID_FINAL_ERROR = 8.0 * math.sqrt(2.0)


@dataclass
class Scenario:
    """One benchmark location: geometry plus the noisy obstacle survey the
    planners are given."""

    index: int
    y0: np.ndarray                  # (3,) start output (x, d, X)
    y_d: np.ndarray                 # (3,) target output
    t_f: float
    true_obstacles: np.ndarray      # (n, 3) of (x_O, d_O, a_O)
    observed_obstacles: np.ndarray  # (n, 3) what the planners believe
    seed: int = 0

    def __post_init__(self):
        self.y0 = np.asarray(self.y0, dtype=float).reshape(3)
        self.y_d = np.asarray(self.y_d, dtype=float).reshape(3)
        self.true_obstacles = np.asarray(self.true_obstacles, dtype=float).reshape(-1, 3)
        self.observed_obstacles = np.asarray(self.observed_obstacles, dtype=float).reshape(-1, 3)
        if self.observed_obstacles.shape != self.true_obstacles.shape:
            raise ValueError("observed and true obstacle sets must be the same size")

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "y0": [float(v) for v in self.y0],
            "y_d": [float(v) for v in self.y_d],
            "t_f": self.t_f,
            "true_obstacles": self.true_obstacles.tolist(),
            "observed_obstacles": self.observed_obstacles.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(index=int(d["index"]), y0=d["y0"], y_d=d["y_d"],
                   t_f=float(d["t_f"]), true_obstacles=d["true_obstacles"],
                   observed_obstacles=d["observed_obstacles"],
                   seed=int(d.get("seed", 0)))


def save_scenarios(path, scenarios):
    with open(path, "w") as fh:
        json.dump([s.to_dict() for s in scenarios], fh, indent=1)


def load_scenarios(path):
    with open(path) as fh:
        return [Scenario.from_dict(d) for d in json.load(fh)]


def generate_scenarios(n_location: int, seed, arena=(0.0, 8.0, 0.0, 8.0),
                       t_f: float = 12.0, clearance: float = 0.5,
                       min_depth: float = 0.5, n_obstacles: int = 1,
                       size_range=(0.5, 1.5), pos_rel_err: float = 0.30,
                       size_rel_err: float = 0.10, max_rejects: int = 10_000):
    """Random start/target/obstacle layouts.

    Start and target are rejection-sampled until they sit at least
    `min_depth` below the surface and `clearance` away from every true
    obstacle surface. The observed survey perturbs each true value by a
    uniform relative error. Deterministic in seed and independent of
    n_location for the shared prefix (per-index child seeds).
    """
    x_lo, x_hi, d_lo, d_hi = arena
    children = np.random.SeedSequence(seed).spawn(n_location)
    out = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        true_obs = np.empty((n_obstacles, 3))
        true_obs[:, 0] = rng.uniform(x_lo, x_hi, n_obstacles)
        true_obs[:, 1] = rng.uniform(d_lo, d_hi, n_obstacles)
        true_obs[:, 2] = rng.uniform(size_range[0], size_range[1], n_obstacles)

        def draw_point():
            for _ in range(max_rejects):
                px = rng.uniform(x_lo, x_hi)
                pd = rng.uniform(max(d_lo, min_depth), d_hi)
                gap = np.hypot(px - true_obs[:, 0], pd - true_obs[:, 1]) - true_obs[:, 2]
                if np.all(gap >= clearance):
                    return px, pd
            raise RuntimeError(
                f"could not place a point clear of obstacles in {max_rejects} draws")

        sx, sd = draw_point()
        gx, gd = draw_point()
        obs = true_obs.copy()
        obs[:, 0] *= 1.0 + pos_rel_err * rng.uniform(-1.0, 1.0, n_obstacles)
        obs[:, 1] *= 1.0 + pos_rel_err * rng.uniform(-1.0, 1.0, n_obstacles)
        obs[:, 2] *= 1.0 + size_rel_err * rng.uniform(-1.0, 1.0, n_obstacles)
        out.append(Scenario(
            index=i,
            y0=np.array([sx, sd, sx]),
            y_d=np.array([gx, gd, gx]),
            t_f=t_f,
            true_obstacles=true_obs,
            observed_obstacles=obs,
            seed=int(rng.integers(0, 2**63)),
        ))
    return out


# ---------------------------------------------------------------- metrics


def final_position_error(traj: Trajectory, y_d) -> float:
    if traj is None or not traj.valid:
        return INVALID_FINAL_ERROR
    y_d = np.asarray(y_d, dtype=float).reshape(3)
    return float(np.linalg.norm(traj.outputs()[-1] - y_d))


def collision_flag(traj: Trajectory, true_obstacles) -> int:
    """1 when the vehicle strictly penetrates any true obstacle at any grid
    time (grazing contact does not count), or when the run went invalid."""
    if traj is None or not traj.valid:
        return 1
    obstacles = np.asarray(true_obstacles, dtype=float).reshape(-1, 3)
    if obstacles.shape[0] == 0:
        return 0
    y = traj.outputs()
    dist = np.hypot(y[:, 0, None] - obstacles[None, :, 0],
                    y[:, 1, None] - obstacles[None, :, 1])
    return int(np.any(dist - obstacles[None, :, 2] < 0.0))


def control_energy(traj: Trajectory) -> float:
    """Time integral of the squared actuator-force norm (trapezoid rule).

    Diverged rollouts score 0.0, same as a missing trajectory: their force
    histories carry overflow garbage and the `valid` column already flags
    the failure."""
    if traj is None or not traj.valid:
        return 0.0
    f2 = np.einsum("ij,ij->i", traj.forces(), traj.forces())
    n = f2.shape[0]
    if n < 2:
        return 0.0
    w = np.full(n, traj.dt)
    w[0] = w[-1] = 0.5 * traj.dt
    return float(w @ f2)


@dataclass
class MetricsRecord:
    method: str
    i: int
    j: int
    epsilon: float
    rho_final: float
    rho_collision: float
    rho_energy: float
    valid: int

    def row(self):
        return [self.method, self.i, self.j, repr(float(self.epsilon)),
                repr(float(self.rho_final)), repr(float(self.rho_collision)),
                repr(float(self.rho_energy)), self.valid]


def score_episode(method: str, i: int, j: int, epsilon: float,
                  traj: Trajectory, scen: Scenario) -> MetricsRecord:
    return MetricsRecord(
        method=method, i=i, j=j, epsilon=epsilon,
        rho_final=final_position_error(traj, scen.y_d),
        rho_collision=float(collision_flag(traj, scen.true_obstacles)),
        rho_energy=control_energy(traj),
        valid=int(traj is not None and traj.valid),
    )


def save_records(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_CSV_HEADER.split(","))
        for rec in records:
            w.writerow(rec.row())


def load_records(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != RESULT_CSV_HEADER.split(","):
        raise ValueError(f"{path} is not a benchmark result file")
    out = []
    for row in rows[1:]:
        out.append(MetricsRecord(
            method=row[0], i=int(row[1]), j=int(row[2]), epsilon=float(row[3]),
            rho_final=float(row[4]), rho_collision=float(row[5]),
            rho_energy=float(row[6]), valid=int(row[7])))
    return out


def aggregate(records):
    """Per-method location averages and their mean/std across locations.

    Each metric is first averaged over the model-uncertainty episodes of a
    location, then summarized over locations with the sample standard
    deviation. Returns {method: {metric: {"per_location", "mean", "std"}}}.
    """
    out = {}
    for method in sorted({r.method for r in records}):
        rows = [r for r in records if r.method == method]
        locs = sorted({r.i for r in rows})
        per = {m: [] for m in METRIC_NAMES}
        for i in locs:
            sub = [r for r in rows if r.i == i]
            if not sub:
                continue
            for m in METRIC_NAMES:
                per[m].append(float(np.mean([getattr(r, m) for r in sub])))
        out[method] = {}
        for m in METRIC_NAMES:
            arr = np.asarray(per[m])
            out[method][m] = {
                "per_location": arr.tolist(),
                "mean": float(arr.mean()) if arr.size else float("nan"),
                "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
            }
    return out


@dataclass
class WelchResult:
    t: float
    df: float
    p_value: float
    significant: bool
    degenerate: bool = False


def welch_t_test(a, b, significance: float = 0.05,
                 alternative: str = "less") -> WelchResult:
    """One-sided Welch two-sample test (default H1: mean(a) < mean(b)) with
    the Welch-Satterthwaite degrees of freedom. Identical degenerate samples
    (both variances zero, equal means) report p = 0.5 with a flag."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise ValueError("welch_t_test needs at least two samples per group")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    diff = a.mean() - b.mean()
    se2 = va / na + vb / nb
    if se2 == 0.0:
        if diff == 0.0:
            return WelchResult(0.0, float(na + nb - 2), 0.5, False, True)
        t_stat = -math.inf if diff < 0 else math.inf
        p = 0.0 if (diff < 0) == (alternative == "less") else 1.0
        return WelchResult(t_stat, float(na + nb - 2), p,
                           p < significance, True)
    t_stat = diff / math.sqrt(se2)
    df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    if alternative == "less":
        p = float(stats.t.cdf(t_stat, df))
    elif alternative == "greater":
        p = float(stats.t.sf(t_stat, df))
    else:
        raise ValueError("alternative must be 'less' or 'greater'")
    return WelchResult(float(t_stat), float(df), p, p < significance, False)


def summarize(records, baseline_method: str = "saa_fb",
              significance: float = 0.05) -> dict:
    """Aggregate plus one-sided tests (baseline smaller) per epsilon."""
    eps_values = sorted({r.epsilon for r in records})
    summary = {"methods": sorted({r.method for r in records}),
               "epsilon_values": eps_values, "per_epsilon": {}}
    for eps in eps_values:
        sub = [r for r in records if r.epsilon == eps]
        agg = aggregate(sub)
        tests = {}
        if baseline_method in agg:
            for method in agg:
                if method == baseline_method:
                    continue
                for metric in METRIC_NAMES:
                    a = agg[baseline_method][metric]["per_location"]
                    b = agg[method][metric]["per_location"]
                    if len(a) < 2 or len(b) < 2:
                        continue
                    res = welch_t_test(a, b, significance)
                    tests[f"{baseline_method}<{method}|{metric}"] = {
                        "t": res.t, "df": res.df, "p_value": res.p_value,
                        "significant": res.significant,
                        "degenerate": res.degenerate,
                    }
        summary["per_epsilon"][repr(float(eps))] = {
            "aggregate": agg, "tests": tests}
    return summary


# ------------------------------------------------------- episode running


@dataclass
class BenchmarkSettings:
    """Everything the benchmark needs beyond the scenario list."""

    params: model.ModelParams = field(default_factory=model.ModelParams)
    uncertainty: stochastic.UncertaintySpec = field(
        default_factory=stochastic.UncertaintySpec)
    diffusion: stochastic.DiffusionSpec = field(
        default_factory=stochastic.DiffusionSpec.velocity_default)
    gain: FeedbackGain = field(default_factory=FeedbackGain.pd_default)
    dt: float = 0.05
    knot_dt: float = 0.25
    hold: str = "zero"
    alpha: float = 0.02
    delta_M: float = 0.3
    n_samples: int = 20
    tau_margin: float = 0.05
    tau_cvar: float = 0.05
    max_outer: int = 8
    inner_maxiter: int = 200
    tol_c: float = 1e-3
    rho0: float = 100.0
    rho0_margin: float = 1e4
    rho_growth: float = 10.0
    rho_max: float = 1e8
    knot_bound_scale: float = 3.0
    grid: baselines.GridSpec = field(default_factory=baselines.GridSpec)
    pid: baselines.PIDGains = field(default_factory=baselines.PIDGains)
    cbf_k0: float = 4.0
    cbf_k1: float = 4.0
    mppi: baselines.MPPIHyper = field(default_factory=baselines.MPPIHyper)
    methods: tuple = DEFAULT_METHODS
    n_model: int = 5

    def ocp_spec(self, scen: Scenario, epsilon: float, gain: FeedbackGain,
                 sample_seed: int) -> optimizer.OCPSpec:
        uspec = replace(self.uncertainty, epsilon=epsilon,
                        mean_obstacles=scen.observed_obstacles)
        return optimizer.OCPSpec(
            params=self.params, uncertainty=uspec, diffusion=self.diffusion,
            x0=stochastic.default_initial_state(scen.y0, self.params),
            y_d=scen.y_d, alpha=self.alpha, delta_M=self.delta_M,
            t_f=scen.t_f, dt=self.dt, N=self.n_samples, gain=gain,
            knot_dt=self.knot_dt, hold=self.hold, tau_margin=self.tau_margin,
            tau_cvar=self.tau_cvar, max_outer=self.max_outer,
            inner_maxiter=self.inner_maxiter, tol_c=self.tol_c,
            rho0=self.rho0, rho0_margin=self.rho0_margin,
            rho_growth=self.rho_growth, rho_max=self.rho_max,
            knot_bound_scale=self.knot_bound_scale,
            sample_seed=sample_seed)


def run_tracking_episode(path: baselines.PathPlan, scen: Scenario,
                         settings: BenchmarkSettings,
                         xi_true: stochastic.UncertainParams,
                         noise: stochastic.NoiseRealization) -> Trajectory:
    """PID tracking of the A* path with the CBF filter, against the true
    plant. The controller believes the expected parameters and the observed
    obstacles."""
    p = settings.params
    dt = settings.dt
    tgrid = stochastic.time_grid(dt, scen.t_f)
    n_steps = tgrid.shape[0] - 1
    believed = p.with_uncertain(stochastic.expected_xi(settings.uncertainty))
    obs = scen.observed_obstacles
    add = _noise_add(noise, settings.diffusion, n_steps)
    p_true = p.as_array(xi_true)

    x = stochastic.default_initial_state(scen.y0, p)
    states = np.empty((n_steps + 1, 12))
    controls = np.empty((n_steps + 1, 4))
    states[0] = x
    integ = None
    ok = True
    for k in range(n_steps):
        rx, rd = path.ref_at(tgrid[k])
        u, integ = baselines.pid_track((rx, rd, rx), x, settings.pid, dt,
                                       integ, believed)
        if obs.shape[0]:
            u, _ = baselines.cbf_filter(u, x, obs, believed,
                                        settings.cbf_k0, settings.cbf_k1)
        controls[k] = u
        x, ok = _plant_step(x, u, p_true, dt, add[k], ok)
        states[k + 1] = x
    controls[-1] = controls[-2] if n_steps else 0.0
    return Trajectory(tgrid, states, controls, ok)


def run_mppi_episode(scen: Scenario, settings: BenchmarkSettings,
                     xi_true: stochastic.UncertainParams,
                     noise: stochastic.NoiseRealization,
                     seed) -> Trajectory:
    """Receding-horizon MPPI against the true plant. Rollouts inside the
    controller use the expected parameters and observed obstacles."""
    p = settings.params
    dt = settings.dt
    tgrid = stochastic.time_grid(dt, scen.t_f)
    n_steps = tgrid.shape[0] - 1
    believed = p.with_uncertain(stochastic.expected_xi(settings.uncertainty))
    add = _noise_add(noise, settings.diffusion, n_steps)
    p_true = p.as_array(xi_true)
    ss = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(seed)
    step_seeds = ss.spawn(n_steps)

    x = stochastic.default_initial_state(scen.y0, p)
    states = np.empty((n_steps + 1, 12))
    controls = np.empty((n_steps + 1, 4))
    states[0] = x
    base = None
    ok = True
    for k in range(n_steps):
        u, base = baselines.mppi_step(x, scen.y_d, scen.observed_obstacles,
                                      settings.mppi, step_seeds[k], believed,
                                      dt=dt, base_seq=base)
        controls[k] = u
        x, ok = _plant_step(x, u, p_true, dt, add[k], ok)
        states[k + 1] = x
    controls[-1] = controls[-2] if n_steps else 0.0
    return Trajectory(tgrid, states, controls, ok)


def _noise_add(noise, diffusion, n_steps):
    if noise is None or diffusion is None or diffusion.is_zero():
        return np.zeros((n_steps, 12))
    if noise.increments.shape[0] != n_steps:
        raise ValueError("noise increment count does not match the grid")
    return noise.increments @ diffusion.D.T


def _plant_step(x, u, params_arr, dt, add, ok):
    """One true-plant step through the rollout kernel (keeps the radius
    clamp and tether-rate sync identical across all methods)."""
    from ._kernels import rollout_open_loop
    states, valid = rollout_open_loop(x, u.reshape(1, 1, 4), params_arr, dt,
                                      model.R_MIN, noise=add.reshape(1, 1, 12))
    return states[0, 1], bool(ok and valid[0])


def plan_methods(scen: Scenario, epsilon: float, settings: BenchmarkSettings,
                 sample_seed: int):
    """Plan every requested method once for this (scenario, epsilon).

    SAA variants share the same sample seed (identical parameter/noise
    draws); A* plans on the observed obstacles. Returns
    {method: prepared-state or None when planning failed}.
    """
    prepared = {}
    for method in settings.methods:
        if method == "saa_fb" or method == "saa":
            gain = settings.gain if method == "saa_fb" else FeedbackGain.zero()
            spec = settings.ocp_spec(scen, epsilon, gain, sample_seed)
            # warm-started from the tracking plan: the constant-preload
            # default sinks far off the arena before the solver recovers
            report = optimizer.solve_socp_fb(
                spec, initial_plan=optimizer.tracking_initial_plan(spec))
            nominal = stochastic.nominal_rollout(
                report.plan, settings.params, settings.dt, scen.t_f,
                spec.x0, uspec=spec.uncertainty)
            prepared[method] = {"report": report, "nominal": nominal,
                                "gain": gain, "spec": spec}
        elif method == "astar_pid_cbf":
            try:
                path = baselines.astar_plan(
                    settings.grid, scen.y0[:2], scen.y_d[:2],
                    scen.observed_obstacles, scen.t_f)
                prepared[method] = {"path": path}
            except baselines.NoPathError:
                prepared[method] = None
        elif method == "mppi":
            prepared[method] = {}
        else:
            raise ValueError(f"unknown benchmark method {method!r}")
    return prepared


def run_location(scen: Scenario, epsilon: float, settings: BenchmarkSettings,
                 seed) -> list:
    """All episodes of one location at one epsilon. Every method faces the
    same per-episode truth draw and plant noise."""
    ss = np.random.SeedSequence(seed, spawn_key=(scen.index,))
    plan_ss, truth_ss, noise_ss, mppi_ss = ss.spawn(4)
    sample_seed = int(plan_ss.generate_state(1, np.uint64)[0])
    prepared = plan_methods(scen, epsilon, settings, sample_seed)

    truth_spec = replace(settings.uncertainty, epsilon=epsilon,
                         mean_obstacles=scen.true_obstacles,
                         obstacle_pos_rel_err=0.0, obstacle_size_rel_err=0.0)
    n_steps = stochastic.time_grid(settings.dt, scen.t_f).shape[0] - 1
    truth_children = truth_ss.spawn(settings.n_model)
    noise_children = noise_ss.spawn(settings.n_model)
    mppi_children = mppi_ss.spawn(settings.n_model)

    records = []
    for j in range(settings.n_model):
        xi_true = stochastic.sample_xi(truth_spec, truth_children[j])
        noise = stochastic.make_noise(noise_children[j], n_steps, settings.dt)
        for method in settings.methods:
            prep = prepared[method]
            if prep is None:
                traj = None
            elif method in ("saa_fb", "saa"):
                traj = stochastic.closed_loop_rollout(
                    prep["report"].plan, prep["nominal"], prep["gain"],
                    settings.params, settings.dt, scen.t_f, noise=noise,
                    xi=xi_true, diffusion=settings.diffusion)
            elif method == "astar_pid_cbf":
                traj = run_tracking_episode(prep["path"], scen, settings,
                                            xi_true, noise)
            else:
                traj = run_mppi_episode(scen, settings, xi_true, noise,
                                        mppi_children[j])
            records.append(score_episode(method, scen.index, j, epsilon,
                                         traj, scen))
    return records


def _location_worker(args):
    scen, epsilon, settings, seed = args
    return run_location(scen, epsilon, settings, seed)


def run_benchmark(scenarios, epsilon: float, settings: BenchmarkSettings,
                  seed, jobs: int = 1) -> list:
    """All locations at one epsilon; `jobs` > 1 fans locations out over
    processes. Results are deterministic in (scenarios, epsilon, seed) and
    independent of `jobs`."""
    tasks = [(scen, epsilon, settings, seed) for scen in scenarios]
    records = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for chunk in pool.map(_location_worker, tasks):
                records.extend(chunk)
    else:
        for task in tasks:
            records.extend(_location_worker(task))
    return records
