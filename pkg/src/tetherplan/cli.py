"""Command-line entry point.

Subcommands: simulate (one rollout), plan (one solve), benchmark (the full
sweep), compare (t-tests between two result tables). Every run drops a
manifest with the config hash, seed, package version, and kernel backend,
which is enough to reproduce the artifacts bit for bit.

Exit codes: 0 success, 2 validation failure, 3 solver did not converge,
4 I/O failure.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__, evaluation, optimizer, stochastic
from ._kernels import backend_name
from .config import ConfigError, load_config, scenario_fields
from .control import FeedbackGain, constant_plan, load_plan, save_plan

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_UNCONVERGED = 3
EXIT_IO = 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tetherplan",
        description="Risk-aware planning and control for a tethered "
                    "vehicle pair, plus the benchmark harness.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument("--seed", type=int, default=None,
                        help="override run.seed")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--jobs", type=int, default=None,
                        help="worker processes for sweeps")

    sp = sub.add_parser("simulate", help="roll one plan out and save the trajectory")
    common(sp)
    sp.add_argument("--plan", default=None, help="plan CSV (default: constant preload)")
    sp.add_argument("--scenario", default=None, help="scenario JSON file")
    sp.add_argument("--epsilon", type=float, default=None,
                    help="override uncertainty.epsilon for the plant draw")
    sp.add_argument("--feedback", action="store_true",
                    help="track the nominal with the configured PD gains")

    sp = sub.add_parser("plan", help="solve the risk-aware OCP for one scenario")
    common(sp)
    sp.add_argument("--scenario", default=None, help="scenario JSON file")
    sp.add_argument("--epsilon", type=float, default=None,
                    help="override uncertainty.epsilon")
    sp.add_argument("--open-loop", action="store_true",
                    help="zero feedback gains (plan-only variant)")

    sp = sub.add_parser("benchmark", help="full scenario/epsilon sweep")
    common(sp)
    sp.add_argument("--emit-plot-data", action="store_true",
                    help="also write per-metric mean/std CSVs")

    sp = sub.add_parser("compare", help="Welch t-tests between two result tables")
    common(sp)
    sp.add_argument("results_a", help="result CSV (hypothesized smaller)")
    sp.add_argument("results_b", help="result CSV")
    sp.add_argument("--significance", type=float, default=0.05)
    return p


def _outdir(cfg, args) -> str:
    out = args.out if args.out is not None else cfg.out_dir
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(out, cfg, args, command):
    manifest = {
        "command": command,
        "config_sha256": cfg.sha256(),
        "seed": cfg.seed if args.seed is None else args.seed,
        "version": __version__,
        "backend": backend_name(),
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def _seed(cfg, args) -> int:
    return cfg.seed if args.seed is None else int(args.seed)


def _scenario(cfg, args, seed):
    if getattr(args, "scenario", None):
        if not os.path.exists(args.scenario):
            raise ConfigError(f"scenario file not found: {args.scenario}")
        scenarios = evaluation.load_scenarios(args.scenario)
        if not scenarios:
            raise ConfigError("scenario file is empty")
        return scenarios[0]
    kw = scenario_fields(cfg)
    kw["n_location"] = 1
    return evaluation.generate_scenarios(seed=seed, **kw)[0]


def cmd_simulate(cfg, args) -> int:
    seed = _seed(cfg, args)
    scen = _scenario(cfg, args, seed)
    settings = cfg.settings
    if args.plan is not None:
        if not os.path.exists(args.plan):
            raise ConfigError(f"plan file not found: {args.plan}")
        plan = load_plan(args.plan)
    else:
        # constant preload holding the initial actuator state: saturation is
        # invertible only while the weight is inside the box, otherwise the
        # plan just commands the raw (unreachable) hover force
        w = cfg.params.m_bar * cfg.params.g
        u_l = -cfg.params.u_max * math.atanh(w / cfg.params.u_max) \
            if w < cfg.params.u_max else -w
        plan = constant_plan(np.array([0.0, 0.0, u_l, 0.0]),
                             scen.t_f, settings.knot_dt, settings.hold)
    uspec = cfg.uncertainty.with_obstacles(scen.observed_obstacles)
    uspec = uspec if args.epsilon is None else \
        stochastic.UncertaintySpec(**{**uspec.__dict__, "epsilon": args.epsilon})
    x0 = stochastic.default_initial_state(scen.y0, cfg.params)
    nominal = stochastic.nominal_rollout(plan, cfg.params, settings.dt,
                                         scen.t_f, x0, uspec=uspec)
    xi_child, noise_child = np.random.SeedSequence(seed).spawn(2)
    xi = stochastic.sample_xi(uspec, xi_child)
    n_steps = nominal.t.shape[0] - 1
    noise = (stochastic.make_noise(noise_child, n_steps, settings.dt)
             if not cfg.diffusion.is_zero() else None)
    gain = cfg.gain if args.feedback else FeedbackGain.zero()
    traj = stochastic.closed_loop_rollout(plan, nominal, gain, cfg.params,
                                          settings.dt, scen.t_f, noise=noise,
                                          xi=xi, diffusion=cfg.diffusion)
    out = _outdir(cfg, args)
    traj.save_csv(os.path.join(out, "trajectory.csv"))
    _write_manifest(out, cfg, args, "simulate")
    y_end = traj.outputs()[-1]
    print(f"simulate: valid={traj.valid} "
          f"final=({y_end[0]:.3f}, {y_end[1]:.3f}, {y_end[2]:.3f}) -> "
          f"{os.path.join(out, 'trajectory.csv')}")
    return EXIT_OK


def cmd_plan(cfg, args) -> int:
    seed = _seed(cfg, args)
    scen = _scenario(cfg, args, seed)
    epsilon = cfg.uncertainty.epsilon if args.epsilon is None else args.epsilon
    gain = FeedbackGain.zero() if args.open_loop else cfg.gain
    spec = cfg.settings.ocp_spec(scen, epsilon, gain, sample_seed=seed)
    report = optimizer.solve_socp_fb(
        spec, initial_plan=optimizer.tracking_initial_plan(spec))
    out = _outdir(cfg, args)
    save_plan(report.plan, os.path.join(out, "plan.csv"))
    with open(os.path.join(out, "report.json"), "w") as fh:
        json.dump(report.summary_dict(), fh, indent=1, sort_keys=True)
    _write_manifest(out, cfg, args, "plan")
    print(f"plan: converged={report.converged} objective={report.objective:.6g} "
          f"cvar={report.cvar_value:.4g} terminal_sq={report.mean_terminal_sq:.4g} "
          f"feedback={report.feedback}")
    return EXIT_OK if report.converged else EXIT_UNCONVERGED


def cmd_benchmark(cfg, args) -> int:
    seed = _seed(cfg, args)
    jobs = cfg.jobs if args.jobs is None else max(1, args.jobs)
    out = _outdir(cfg, args)
    kw = scenario_fields(cfg)
    scenarios = evaluation.generate_scenarios(seed=seed, **kw)
    evaluation.save_scenarios(os.path.join(out, "scenarios.json"), scenarios)
    epsilons = [float(e) for e in cfg.raw["scenarios"]["epsilons"]]
    records = []
    interrupted = False
    try:
        for eps in epsilons:
            records.extend(evaluation.run_benchmark(
                scenarios, eps, cfg.settings, seed, jobs=jobs))
    except KeyboardInterrupt:
        interrupted = True
    evaluation.save_records(os.path.join(out, "results.csv"), records)
    summary = evaluation.summarize(records)
    summary["interrupted"] = interrupted
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    _write_manifest(out, cfg, args, "benchmark")
    if args.emit_plot_data:
        _emit_plot_data(out, records)
    n_eps = len({r.epsilon for r in records})
    print(f"benchmark: {len(records)} records over {len(scenarios)} locations, "
          f"{n_eps} epsilon values -> {out}"
          + (" (interrupted, partial results flushed)" if interrupted else ""))
    return EXIT_OK if not interrupted else 1


def _emit_plot_data(out, records):
    """Per-metric CSVs of location-mean bars with std whiskers."""
    import csv as _csv
    for metric in evaluation.METRIC_NAMES:
        path = os.path.join(out, f"plot_{metric}.csv")
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["epsilon", "method", "mean", "std"])
            for eps in sorted({r.epsilon for r in records}):
                agg = evaluation.aggregate(
                    [r for r in records if r.epsilon == eps])
                for method in sorted(agg):
                    cell = agg[method][metric]
                    w.writerow([repr(float(eps)), method,
                                repr(cell["mean"]), repr(cell["std"])])


def cmd_compare(cfg, args) -> int:
    for path in (args.results_a, args.results_b):
        if not os.path.exists(path):
            raise ConfigError(f"result file not found: {path}")
    rec_a = evaluation.load_records(args.results_a)
    rec_b = evaluation.load_records(args.results_b)
    out = _outdir(cfg, args)
    tests = {}
    eps_common = sorted({r.epsilon for r in rec_a} & {r.epsilon for r in rec_b})
    for eps in eps_common:
        agg_a = evaluation.aggregate([r for r in rec_a if r.epsilon == eps])
        agg_b = evaluation.aggregate([r for r in rec_b if r.epsilon == eps])
        block = {}
        for method in sorted(set(agg_a) & set(agg_b)):
            for metric in evaluation.METRIC_NAMES:
                a = agg_a[method][metric]["per_location"]
                b = agg_b[method][metric]["per_location"]
                if len(a) < 2 or len(b) < 2:
                    continue
                res = evaluation.welch_t_test(a, b, args.significance)
                block[f"{method}|{metric}"] = {
                    "t": res.t, "df": res.df, "p_value": res.p_value,
                    "significant": res.significant,
                    "degenerate": res.degenerate,
                }
        tests[repr(float(eps))] = block
    result = {"a": args.results_a, "b": args.results_b,
              "direction": "mean(a) < mean(b)",
              "significance": args.significance, "tests": tests}
    with open(os.path.join(out, "comparison.json"), "w") as fh:
        json.dump(result, fh, indent=1, sort_keys=True)
    _write_manifest(out, cfg, args, "compare")
    n_sig = sum(1 for block in tests.values()
                for t in block.values() if t["significant"])
    print(f"compare: {sum(len(b) for b in tests.values())} tests, "
          f"{n_sig} significant -> {os.path.join(out, 'comparison.json')}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    handler = {"simulate": cmd_simulate, "plan": cmd_plan,
               "benchmark": cmd_benchmark, "compare": cmd_compare}[args.command]
    try:
        return handler(cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
