"""Timing comparison of the compiled and pure-Python kernel backends.

Runs the two hot kernels (path simulation, likelihood root solve) through
both backends on identical inputs, reports wall-clock timings, and checks
that the backends agree: trajectories byte-for-byte, roots to 1e-9.

Usage: python3 benchmarks/bench_kernels.py [--paths N] [--horizon T]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ergodicmm import ModelParams, solve_ergodic
from ergodicmm._backend import get_backend
from ergodicmm.market_sim import RngSpec, make_rng

try:
    get_backend("c")
    HAVE_C = True
except ImportError:
    HAVE_C = False


def _static_tables(params: ModelParams):
    sol = solve_ergodic(params)
    ask = sol.psi_plus.copy()
    bid = sol.psi_minus.copy()
    ask[params.n - 1] = np.inf
    bid[0] = np.inf
    return ask, bid


def bench_simulate(backend_name: str, paths: int, horizon: float, params: ModelParams):
    be = get_backend(backend_name)
    ask, bid = _static_tables(params)
    qsq = params.grid.states.astype(float) ** 2
    sched_t = np.array([0.0])
    sched_k = np.array([params.kappa])
    q0_index = params.grid.index_of(0)

    t0 = time.perf_counter()
    events = 0
    last = None
    for s in range(paths):
        rng = make_rng(RngSpec(master_seed=1234, scenario=s))
        out = be.simulate_static_path(
            params.lambda_plus,
            params.lambda_minus,
            params.phi,
            horizon,
            q0_index,
            ask,
            bid,
            qsq,
            sched_t,
            sched_k,
            rng,
        )
        events += out[0].shape[0]
        last = out
    dt = time.perf_counter() - t0
    return dt, events, last


def bench_solve(backend_name: str, solves: int, n_obs: int):
    be = get_backend(backend_name)
    rng = np.random.default_rng(99)
    deltas = rng.uniform(0.02, 0.3, size=n_obs)
    fills = (rng.random(n_obs) < np.exp(-10.0 * deltas)).astype(np.uint8)
    weights = np.ones(n_obs)

    t0 = time.perf_counter()
    root = None
    for _ in range(solves):
        root = be.solve_kappa_packed(deltas, fills, weights, 0.01, 100.0, 50.0, 1e-10, 200)
    dt = time.perf_counter() - t0
    return dt, root


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=200)
    ap.add_argument("--horizon", type=float, default=1000.0)
    ap.add_argument("--solves", type=int, default=300)
    ap.add_argument("--obs", type=int, default=2000)
    ns = ap.parse_args()

    params = ModelParams(
        lambda_plus=1.0, lambda_minus=1.0, kappa=10.0, phi=1e-5, q_max=30, q_min=-30
    )
    backends = ["python"] + (["c"] if HAVE_C else [])
    if not HAVE_C:
        print("compiled extension not available; timing the fallback only")

    sim_results = {}
    for name in backends:
        dt, events, last = bench_simulate(name, ns.paths, ns.horizon, params)
        sim_results[name] = (dt, events, last)
        rate = events / dt if dt > 0 else float("inf")
        print(
            f"simulate[{name:6s}]: {ns.paths} paths x {ns.horizon:g}s, "
            f"{events} events in {dt:.3f}s ({rate:,.0f} events/s)"
        )

    solve_results = {}
    for name in backends:
        dt, root = bench_solve(name, ns.solves, ns.obs)
        solve_results[name] = (dt, root)
        rate = ns.solves / dt if dt > 0 else float("inf")
        print(
            f"solve   [{name:6s}]: {ns.solves} solves x {ns.obs} obs "
            f"in {dt:.3f}s ({rate:,.0f} solves/s), root {root:.12g}"
        )

    if HAVE_C:
        (_, _, last_py), (_, _, last_c) = sim_results["python"], sim_results["c"]
        for a, b in zip(last_py, last_c):
            if isinstance(a, np.ndarray):
                assert np.array_equal(a, b), "backend trajectories diverge"
            else:
                assert a == b, "backend reward integrals diverge"
        root_py = solve_results["python"][1]
        root_c = solve_results["c"][1]
        assert abs(root_py - root_c) <= 1e-9, f"roots diverge: {root_py} vs {root_c}"
        speed_sim = sim_results["python"][0] / sim_results["c"][0]
        speed_sol = solve_results["python"][0] / solve_results["c"][0]
        print("agreement: trajectories identical, roots within 1e-9")
        print(f"speedup: simulate x{speed_sim:.1f}, solve x{speed_sol:.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
