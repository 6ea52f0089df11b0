"""Structured JSON configuration.

One section per module, defaults inline below. Unknown keys anywhere in the
user file are hard errors so a typo cannot silently fall back to a default.
"""

import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import baselines, model, stochastic
from .control import FeedbackGain
from .evaluation import DEFAULT_METHODS, BenchmarkSettings

DEFAULTS = {
    "model": {
        "m": 120.0, "m_bar": 90.0, "M": 1075.0, "M_l": 30.0, "g": 9.8,
        "c_theta": 120.0, "c_r": 120.0, "c_l": 300.0, "c_X": 1000.0,
        "T_theta": 0.1, "T_r": 0.1, "T_l": 0.5, "T_X": 1.0, "u_max": 400.0,
    },
    "uncertainty": {
        "epsilon": 0.0,
        "obstacle_pos_rel_err": 0.30,
        "obstacle_size_rel_err": 0.10,
        "kind": "uniform",
    },
    "diffusion": {"velocity_intensity": 0.01},
    "control": {"knot_dt": 0.25, "hold": "zero", "kp": 800.0, "kd": 80.0},
    "ocp": {
        "alpha": 0.02, "delta_M": 0.3, "n_samples": 20, "dt": 0.05,
        "tau_margin": 0.05, "tau_cvar": 0.05, "max_outer": 8,
        "inner_maxiter": 200, "tol_c": 1e-3, "rho0": 100.0,
        "rho0_margin": 1e4, "rho_growth": 10.0, "rho_max": 1e8,
        "knot_bound_scale": 3.0,
    },
    "baselines": {
        "grid": {"cell": 0.1, "x_min": 0.0, "x_max": 8.0, "d_min": 0.0,
                 "d_max": 8.0, "connectivity": 8, "inflation": 0.2},
        "pid": {"kp": [800.0, 800.0, 800.0], "ki": [20.0, 20.0, 20.0],
                "kd": [80.0, 80.0, 80.0]},
        "cbf": {"k0": 4.0, "k1": 4.0},
        "mppi": {"n_samples": 256, "horizon": 2.0, "lam": 1.0,
                 "noise_std_scale": 0.25, "noise_knot_dt": 0.5,
                 "w_terminal": 500.0, "w_obstacle": 1e6,
                 "invalid_cost": 1e9},
    },
    "scenarios": {
        "n_location": 10, "n_model": 5, "epsilons": [0.0, 0.2, 0.5],
        "arena": [0.0, 8.0, 0.0, 8.0], "clearance": 0.5, "min_depth": 0.5,
        "n_obstacles": 1, "size_min": 0.5, "size_max": 1.5, "t_f": 12.0,
    },
    "run": {
        "seed": 0, "jobs": 1, "out_dir": "runs",
        "methods": list(DEFAULT_METHODS),
    },
}


class ConfigError(ValueError):
    """Raised on unknown keys, wrong value types, or invalid settings."""


def _merge(defaults, user, prefix=""):
    if not isinstance(user, dict):
        raise ConfigError(f"section {prefix or '<root>'} must be an object")
    out = copy.deepcopy(defaults)
    for key, val in user.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {path}")
        ref = defaults[key]
        if isinstance(ref, dict):
            out[key] = _merge(ref, val, path)
        elif isinstance(ref, bool):
            if not isinstance(val, bool):
                raise ConfigError(f"{path} must be a boolean")
            out[key] = val
        elif isinstance(ref, (int, float)):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"{path} must be a number")
            out[key] = type(ref)(val) if isinstance(ref, int) and isinstance(val, int) else float(val)
        elif isinstance(ref, str):
            if not isinstance(val, str):
                raise ConfigError(f"{path} must be a string")
            out[key] = val
        elif isinstance(ref, list):
            if not isinstance(val, list):
                raise ConfigError(f"{path} must be a list")
            out[key] = copy.deepcopy(val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class RunConfig:
    """Validated configuration with every module's objects prebuilt."""

    raw: dict = field(repr=False)
    params: model.ModelParams
    uncertainty: stochastic.UncertaintySpec
    diffusion: stochastic.DiffusionSpec
    gain: FeedbackGain
    settings: BenchmarkSettings
    seed: int
    jobs: int
    out_dir: str

    def sha256(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode()).hexdigest()


def _build(raw: dict) -> RunConfig:
    mp = model.ModelParams(**raw["model"]).validate()
    unc = raw["uncertainty"]
    uspec = stochastic.UncertaintySpec(
        epsilon=float(unc["epsilon"]), mean_m=mp.m, mean_m_bar=mp.m_bar,
        mean_c_theta=mp.c_theta, mean_c_r=mp.c_r,
        obstacle_pos_rel_err=float(unc["obstacle_pos_rel_err"]),
        obstacle_size_rel_err=float(unc["obstacle_size_rel_err"]),
        kind=unc["kind"]).validate()
    intensity = float(raw["diffusion"]["velocity_intensity"])
    if intensity < 0:
        raise ConfigError("diffusion.velocity_intensity must be >= 0")
    dspec = (stochastic.DiffusionSpec.velocity_default(intensity)
             if intensity > 0 else stochastic.DiffusionSpec())
    ctl = raw["control"]
    if ctl["hold"] not in ("zero", "linear"):
        raise ConfigError("control.hold must be 'zero' or 'linear'")
    gain = FeedbackGain.pd_default(float(ctl["kp"]), float(ctl["kd"]))
    ocp = raw["ocp"]
    if not (0.0 < float(ocp["alpha"]) <= 1.0):
        raise ConfigError("ocp.alpha must lie in (0, 1]")
    if float(ocp["dt"]) <= 0:
        raise ConfigError("ocp.dt must be > 0")
    if int(ocp["n_samples"]) < 1:
        raise ConfigError("ocp.n_samples must be >= 1")
    bl = raw["baselines"]
    grid = baselines.GridSpec(
        cell=float(bl["grid"]["cell"]),
        bounds=(float(bl["grid"]["x_min"]), float(bl["grid"]["x_max"]),
                float(bl["grid"]["d_min"]), float(bl["grid"]["d_max"])),
        connectivity=int(bl["grid"]["connectivity"]),
        inflation=float(bl["grid"]["inflation"])).validate()
    pid = baselines.PIDGains(bl["pid"]["kp"], bl["pid"]["ki"],
                             bl["pid"]["kd"]).validate()
    mppi = baselines.MPPIHyper(
        n_samples=int(bl["mppi"]["n_samples"]),
        horizon=float(bl["mppi"]["horizon"]), lam=float(bl["mppi"]["lam"]),
        noise_std_scale=float(bl["mppi"]["noise_std_scale"]),
        noise_knot_dt=float(bl["mppi"]["noise_knot_dt"]),
        w_terminal=float(bl["mppi"]["w_terminal"]),
        w_obstacle=float(bl["mppi"]["w_obstacle"]),
        invalid_cost=float(bl["mppi"]["invalid_cost"])).validate()
    sc = raw["scenarios"]
    if int(sc["n_location"]) < 1 or int(sc["n_model"]) < 1:
        raise ConfigError("scenarios.n_location and n_model must be >= 1")
    if float(sc["size_min"]) <= 0 or float(sc["size_max"]) < float(sc["size_min"]):
        raise ConfigError("scenarios obstacle size range is invalid")
    if len(sc["arena"]) != 4:
        raise ConfigError("scenarios.arena must be [x_min, x_max, d_min, d_max]")
    stochastic.time_grid(float(ocp["dt"]), float(sc["t_f"]))
    stochastic.time_grid(float(ctl["knot_dt"]), float(sc["t_f"]))
    run = raw["run"]
    methods = tuple(run["methods"])
    for mname in methods:
        if mname not in DEFAULT_METHODS:
            raise ConfigError(f"run.methods contains unknown method {mname!r}")
    settings = BenchmarkSettings(
        params=mp, uncertainty=uspec, diffusion=dspec, gain=gain,
        dt=float(ocp["dt"]), knot_dt=float(ctl["knot_dt"]), hold=ctl["hold"],
        alpha=float(ocp["alpha"]), delta_M=float(ocp["delta_M"]),
        n_samples=int(ocp["n_samples"]), tau_margin=float(ocp["tau_margin"]),
        tau_cvar=float(ocp["tau_cvar"]), max_outer=int(ocp["max_outer"]),
        inner_maxiter=int(ocp["inner_maxiter"]), tol_c=float(ocp["tol_c"]),
        rho0=float(ocp["rho0"]), rho0_margin=float(ocp["rho0_margin"]),
        rho_growth=float(ocp["rho_growth"]), rho_max=float(ocp["rho_max"]),
        knot_bound_scale=float(ocp["knot_bound_scale"]),
        grid=grid, pid=pid, cbf_k0=float(bl["cbf"]["k0"]),
        cbf_k1=float(bl["cbf"]["k1"]), mppi=mppi, methods=methods,
        n_model=int(sc["n_model"]))
    return RunConfig(raw=raw, params=mp, uncertainty=uspec, diffusion=dspec,
                     gain=gain, settings=settings, seed=int(run["seed"]),
                     jobs=int(run["jobs"]), out_dir=run["out_dir"])


def load_config(path=None) -> RunConfig:
    """Read, merge over defaults, and fully validate a config file. With no
    path the defaults are returned (also validated)."""
    if path is None:
        user = {}
    else:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    raw = _merge(DEFAULTS, user)
    try:
        return _build(raw)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def scenario_fields(cfg: RunConfig) -> dict:
    """Keyword arguments for generate_scenarios drawn from the config."""
    sc = cfg.raw["scenarios"]
    unc = cfg.raw["uncertainty"]
    return {
        "n_location": int(sc["n_location"]),
        "arena": tuple(float(v) for v in sc["arena"]),
        "t_f": float(sc["t_f"]),
        "clearance": float(sc["clearance"]),
        "min_depth": float(sc["min_depth"]),
        "n_obstacles": int(sc["n_obstacles"]),
        "size_range": (float(sc["size_min"]), float(sc["size_max"])),
        "pos_rel_err": float(unc["obstacle_pos_rel_err"]),
        "size_rel_err": float(unc["obstacle_size_rel_err"]),
    }
