"""Throughput comparison of the compiled rollout core vs the numpy fallback.

Times the forward closed-loop rollout and the adjoint sweep on a
representative workload (Table-scale plant, 12 s horizon at dt = 0.05,
a batch of perturbed parameter rows) and reports the speedup. Also checks
that both backends agree on the same inputs before trusting the numbers.

Run:  python3 benchmarks/bench_backends.py [--samples N] [--repeats R]
"""

import argparse
import time

import numpy as np

from tetherplan import model
from tetherplan._kernels import numpy_ref

try:
    from tetherplan._kernels import _core
except ImportError:
    _core = None


def _workload(n_samples: int, rng: np.random.Generator):
    params = model.ModelParams()
    dt, t_f = 0.05, 12.0
    T = int(round(t_f / dt))
    base = params.as_array()
    rows = np.tile(base, (n_samples, 1))
    rows[:, 1] *= 1.0 + 0.3 * (2.0 * rng.random(n_samples) - 1.0)  # m_bar
    x0 = np.zeros(12)
    x0[1] = x0[2] = 5.0
    x0[9] = x0[10] = -0.5 * params.m_bar * params.g
    uff = rng.normal(scale=50.0, size=(T + 1, 4))
    xnom = np.tile(x0, (T + 1, 1))
    kp = 800.0 * np.eye(4)
    kd = 80.0 * np.eye(4)
    noise = 0.01 * np.sqrt(dt) * rng.standard_normal((n_samples, T, 12))
    gx = rng.normal(size=(n_samples, T + 1, 12))
    gmu = rng.normal(size=(n_samples, T + 1, 4))
    return dict(x0=x0, uff=uff, xnom=xnom, kp=kp, kd=kd,
                u_max=params.u_max, params=rows, noise=noise, dt=dt,
                r_min=model.R_MIN, gx=gx, gmu=gmu)


def _run(backend, w):
    states, mu, valid = backend.rollout_closed_loop(
        w["x0"], w["uff"], w["xnom"], w["kp"], w["kd"], w["u_max"],
        w["params"], w["noise"], w["dt"], w["r_min"])
    guff, gnom = backend.rollout_adjoint(
        states, mu, w["xnom"], w["kp"], w["kd"], w["u_max"], w["params"],
        w["dt"], w["r_min"], w["gx"], w["gmu"])
    return states, mu, valid, guff, gnom


def _time(backend, w, repeats: int):
    fwd, adj = [], []
    states = mu = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        states, mu, _ = backend.rollout_closed_loop(
            w["x0"], w["uff"], w["xnom"], w["kp"], w["kd"], w["u_max"],
            w["params"], w["noise"], w["dt"], w["r_min"])
        t1 = time.perf_counter()
        backend.rollout_adjoint(
            states, mu, w["xnom"], w["kp"], w["kd"], w["u_max"],
            w["params"], w["dt"], w["r_min"], w["gx"], w["gmu"])
        t2 = time.perf_counter()
        fwd.append(t1 - t0)
        adj.append(t2 - t1)
    return min(fwd), min(adj)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=20)
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    w = _workload(args.samples, np.random.default_rng(args.seed))

    if _core is None:
        print("compiled core not importable; timing numpy backend only")
        fwd, adj = _time(numpy_ref, w, args.repeats)
        print(f"numpy     forward {fwd * 1e3:8.2f} ms   adjoint {adj * 1e3:8.2f} ms")
        return 0

    ref = _run(numpy_ref, w)
    got = _run(_core, w)
    worst = max(float(np.max(np.abs(a - b))) for a, b in zip(ref[:2] + ref[3:],
                                                             got[:2] + got[3:]))
    agree = bool(np.array_equal(ref[2], got[2]))
    print(f"backend agreement: max|diff| = {worst:.3e}, valid flags equal: {agree}")
    if worst > 1e-9 or not agree:
        print("backends disagree, refusing to benchmark")
        return 1

    rows = []
    for name, backend in (("numpy", numpy_ref), ("compiled", _core)):
        fwd, adj = _time(backend, w, args.repeats)
        rows.append((name, fwd, adj))
        print(f"{name:9s} forward {fwd * 1e3:8.2f} ms   adjoint {adj * 1e3:8.2f} ms"
              f"   (best of {args.repeats}, N={args.samples})")
    print(f"speedup   forward {rows[0][1] / rows[1][1]:8.2f} x "
          f"   adjoint {rows[0][2] / rows[1][2]:8.2f} x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
