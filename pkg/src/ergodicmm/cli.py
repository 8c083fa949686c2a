"""Command-line harness.

Subcommands
-----------
solve           stationary policy and equilibrium for one model -> solution.csv
simulate        one controlled trajectory -> trajectory.csv
misspec-gamma   long-run reward of mismatched stationary policies -> misspec_gamma.csv
finite-horizon  v(0, q; T) / T against the long-run rate -> finite_horizon.csv
experiment      Monte Carlo studies:
                  regret           mean regret curve, growth fits
                  equilibrium      total-variation distance to equilibrium
                  nonstationary    tracking error under a switching ground truth
                  sweep-c1         leading fit coefficient over parameter grids
                  mle-consistency  estimator error versus sample size

Configuration is flat key=value text with dotted keys grouped by prefix
(model.*, estimator.*, experiment.*, schedule.*); every key has a
default, unknown keys are rejected, # starts a comment.  --set key=value
overrides individual entries.  Each run writes its artifacts plus
run_manifest.json (resolved configuration, master seed, sha256 of every
output) into --out; the manifest is written last, and on failure the
partial outputs are removed.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from ._io import RunDir
from .errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    ErgodicMMError,
    IrreducibilityError,
    OrderingError,
    PolicyError,
    StructureError,
)
from .estimator import EstimatorConfig, consistency_experiment
from .hjb_core import (
    InventoryGrid,
    ModelParams,
    equilibrium_distribution,
    finite_horizon_value,
    misspecified_gamma,
    solve_ergodic,
    transition_rate_matrix,
)
from .market_sim import SIDE_BUY, SIDE_SELL, RngSpec, make_rng, simulate
from .regret_lab import (
    ExperimentConfig,
    build_policy,
    c1_dependency_sweep,
    equilibrium_convergence_study,
    monte_carlo,
    nonstationary_experiment,
)

# Every recognized key with its default, as strings the way configparser
# yields them.  A key outside this table is a configuration error even
# when the active subcommand would not read it.
_DEFAULTS = {
    "model": {
        "lambda_plus": "0.4",
        "lambda_minus": "0.4",
        "kappa": "10.0",
        "phi": "1e-6",
        "q_max": "30",
        "q_min": "-30",
        "alpha_terminal": "0.0",
        "sigma": "0.01",
        "s0": "10.0",
        "allow_degenerate": "false",
    },
    "estimator": {
        "delta0": "0.01",
        "k_lower": "1.0",
        "k_upper": "100.0",
        "kappa_init": "50.0",
        "mode": "full",
        "window": "30.0",
        "ewma_alpha": "0.1",
        "root_tolerance": "1e-10",
        "max_iterations": "200",
    },
    "experiment": {
        "policy": "learn:full",
        "horizon": "1000.0",
        "scenarios": "1000",
        "grid_points": "200",
        "transient_cutoff": "10.0",
        "q0": "0",
        "bootstrap": "1000",
        "t_grid": "5,10,15,20,30,40,60,80,120,2000",
        "kappa_min": "1.0",
        "kappa_max": "100.0",
        "kappa_points": "41",
        "horizons": "10,100,1000",
        "sample_sizes": "100,1000,10000",
        "replications": "200",
        "phi_grid": "1e-6,1e-5,1e-4",
        "lambda_grid": "0.4,0.7,1.0",
        "kbar_grid": "20,50,100",
        "kappa0_grid": "10,40,80",
    },
    "schedule": {
        "start_times": "",
        "kappa_values": "",
    },
}

_SIDE_LABEL = {0: SIDE_BUY, 1: SIDE_SELL}


def _assign(cfg: dict, dotted: str, value: str, origin: str) -> None:
    if "." not in dotted:
        raise ConfigError(f"{origin}: expected a dotted key like model.kappa, got {dotted!r}")
    sec, key = dotted.split(".", 1)
    if sec not in cfg or key not in cfg[sec]:
        raise ConfigError(f"{origin}: unknown config key {dotted}")
    cfg[sec][key] = value.strip()


def _load_config(path: str | None, sets) -> dict:
    cfg = {sec: dict(keys) for sec, keys in _DEFAULTS.items()}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        for lineno, line in enumerate(lines, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            dotted, sep, value = text.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {text!r}")
            _assign(cfg, dotted.strip(), value, f"{path}:{lineno}")
    for item in sets or ():
        dotted, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        _assign(cfg, dotted.strip(), value, "--set")
    return cfg


def serialize_config(cfg: dict) -> str:
    """Flat text form of a resolved config; parsing it back is the identity."""
    lines = [
        f"{sec}.{key} = {cfg[sec][key]}"
        for sec in _DEFAULTS
        for key in _DEFAULTS[sec]
    ]
    return "\n".join(lines) + "\n"


def _as_float(cfg, sec, key) -> float:
    raw = cfg[sec][key]
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{sec}.{key} must be a number, got {raw!r}") from exc


def _as_int(cfg, sec, key) -> int:
    raw = cfg[sec][key]
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{sec}.{key} must be an integer, got {raw!r}") from exc


def _as_bool(cfg, sec, key) -> bool:
    raw = cfg[sec][key].strip().lower()
    if raw in ("1", "true", "yes", "on"):
        return True
    if raw in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{sec}.{key} must be a boolean, got {cfg[sec][key]!r}")


def _as_float_list(cfg, sec, key):
    raw = cfg[sec][key].strip()
    if not raw:
        return []
    try:
        return [float(tok) for tok in raw.split(",")]
    except ValueError as exc:
        raise ConfigError(f"{sec}.{key} must be comma-separated numbers") from exc


def _as_int_list(cfg, sec, key):
    out = []
    for v in _as_float_list(cfg, sec, key):
        if v != int(v):
            raise ConfigError(f"{sec}.{key} must be comma-separated integers")
        out.append(int(v))
    return out


def _model_params(cfg) -> ModelParams:
    try:
        return ModelParams(
            lambda_plus=_as_float(cfg, "model", "lambda_plus"),
            lambda_minus=_as_float(cfg, "model", "lambda_minus"),
            kappa=_as_float(cfg, "model", "kappa"),
            phi=_as_float(cfg, "model", "phi"),
            q_max=_as_int(cfg, "model", "q_max"),
            q_min=_as_int(cfg, "model", "q_min"),
            alpha_terminal=_as_float(cfg, "model", "alpha_terminal"),
            sigma=_as_float(cfg, "model", "sigma"),
            s0=_as_float(cfg, "model", "s0"),
            allow_degenerate=_as_bool(cfg, "model", "allow_degenerate"),
        )
    except DomainError as exc:
        # bad model values arriving through the config are config errors
        raise ConfigError(str(exc)) from exc


def _estimator_config(cfg) -> EstimatorConfig:
    try:
        return EstimatorConfig(
            delta0=_as_float(cfg, "estimator", "delta0"),
            k_lower=_as_float(cfg, "estimator", "k_lower"),
            k_upper=_as_float(cfg, "estimator", "k_upper"),
            kappa_init=_as_float(cfg, "estimator", "kappa_init"),
            mode=cfg["estimator"]["mode"].strip(),
            window=_as_float(cfg, "estimator", "window"),
            ewma_alpha=_as_float(cfg, "estimator", "ewma_alpha"),
            root_tolerance=_as_float(cfg, "estimator", "root_tolerance"),
            max_iterations=_as_int(cfg, "estimator", "max_iterations"),
        )
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def _schedule(cfg):
    starts = _as_float_list(cfg, "schedule", "start_times")
    kappas = _as_float_list(cfg, "schedule", "kappa_values")
    if not starts and not kappas:
        return None
    if len(starts) != len(kappas):
        raise ConfigError("schedule.start_times and schedule.kappa_values differ in length")
    return tuple(zip(starts, kappas))


def _config_snapshot(cfg) -> dict:
    return {
        f"{sec}.{key}": cfg[sec][key] for sec in _DEFAULTS for key in _DEFAULTS[sec]
    }


def _resolve_seed(ns) -> int:
    if ns.seed is not None:
        if not (0 <= ns.seed < 2**64):
            raise ConfigError("--seed must fit in an unsigned 64-bit integer")
        return ns.seed
    return int(np.random.SeedSequence().generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------- commands


def cmd_solve(cfg, run: RunDir, seed: int) -> None:
    params = _model_params(cfg)
    sol = solve_ergodic(params)
    chain = transition_rate_matrix(sol.psi_plus, sol.psi_minus, params.kappa, params)
    pi = equilibrium_distribution(chain)
    grid = InventoryGrid(params.q_max, params.q_min)
    rows = [
        (int(q), sol.v_hat[i], sol.psi_plus[i], sol.psi_minus[i], pi[i])
        for i, q in enumerate(grid.states)
    ]
    run.write_csv("solution.csv", ("q", "v_hat", "psi_plus", "psi_minus", "pi"), rows)
    print(f"gamma = {sol.gamma:.10g}")
    print(f"lambda_max = {sol.lambda_max:.10g}")


def cmd_simulate(cfg, run: RunDir, seed: int) -> None:
    params = _model_params(cfg)
    policy, eff_est = build_policy(cfg["experiment"]["policy"].strip(), _estimator_config(cfg))
    traj = simulate(
        params,
        policy,
        _as_float(cfg, "experiment", "horizon"),
        RngSpec(master_seed=seed, scenario=0),
        estimator=eff_est,
        q0=_as_int(cfg, "experiment", "q0"),
        schedule=_schedule(cfg),
    )
    learning = traj.kappa_hat is not None
    rows = [
        (
            traj.times[n],
            _SIDE_LABEL[int(traj.sides[n])],
            traj.depths[n],
            int(traj.fills[n]),
            int(traj.inventory[n]),
            traj.cum_reward[n],
            traj.kappa_hat[n] if learning else None,
        )
        for n in range(traj.times.shape[0])
    ]
    run.write_csv(
        "trajectory.csv",
        ("time", "side", "depth", "filled", "inventory", "reward_integral", "kappa_hat"),
        rows,
    )
    if learning:
        trace = [
            (traj.times[n], traj.kappa_raw[n], traj.kappa_hat[n])
            for n in range(traj.times.shape[0])
        ]
        run.write_csv("estimator_trace.csv", ("time", "kappa_raw", "kappa_hat"), trace)
    print(f"events = {traj.times.shape[0]}")
    print(f"reward = {traj.reward_integral:.10g}")


def cmd_misspec_gamma(cfg, run: RunDir, seed: int) -> None:
    params = _model_params(cfg)
    lo = _as_float(cfg, "experiment", "kappa_min")
    hi = _as_float(cfg, "experiment", "kappa_max")
    npts = _as_int(cfg, "experiment", "kappa_points")
    if not (0.0 < lo < hi):
        raise ConfigError("require 0 < kappa_min < kappa_max")
    if npts < 2:
        raise ConfigError("kappa_points must be at least 2")
    rows = []
    for k in np.linspace(lo, hi, npts):
        mis = misspecified_gamma(float(k), params.kappa, params)
        rows.append((float(k), mis.gamma_cross))
    run.write_csv("misspec_gamma.csv", ("kappa", "gamma_cross"), rows)


def cmd_finite_horizon(cfg, run: RunDir, seed: int) -> None:
    params = _model_params(cfg)
    horizons = _as_float_list(cfg, "experiment", "horizons")
    if not horizons:
        raise ConfigError("experiment.horizons must not be empty")
    grid = InventoryGrid(params.q_max, params.q_min)
    probes = {params.q_min, params.q_max}
    if params.q_min <= 0 <= params.q_max:
        probes.add(0)
    sol = solve_ergodic(params)
    rows = []
    for T in horizons:
        if T <= 0:
            raise ConfigError("horizons must be positive")
        v0 = finite_horizon_value(0.0, float(T), params)
        for q in sorted(probes):
            rows.append((float(T), int(q), v0[grid.index_of(q)] / T))
    run.write_csv("finite_horizon.csv", ("horizon", "q", "value_over_horizon"), rows)
    print(f"gamma = {sol.gamma:.10g}")


def _experiment_config(cfg, seed: int, threads: int) -> ExperimentConfig:
    return ExperimentConfig(
        model=_model_params(cfg),
        policy=cfg["experiment"]["policy"].strip(),
        horizon=_as_float(cfg, "experiment", "horizon"),
        scenarios=_as_int(cfg, "experiment", "scenarios"),
        master_seed=seed,
        estimator=_estimator_config(cfg),
        schedule=_schedule(cfg),
        q0=_as_int(cfg, "experiment", "q0"),
        grid_points=_as_int(cfg, "experiment", "grid_points"),
        transient_cutoff=_as_float(cfg, "experiment", "transient_cutoff"),
        workers=threads,
    )


def cmd_experiment_regret(cfg, run: RunDir, seed: int, threads: int) -> None:
    result = monte_carlo(_experiment_config(cfg, seed, threads))
    rows = [
        (result.times[i], result.mean_regret[i], result.ci_low[i], result.ci_high[i])
        for i in range(result.times.shape[0])
    ]
    run.write_csv("regret_mean.csv", ("time", "mean", "ci_low", "ci_high"), rows)
    if result.mean_abs_error is not None:
        err_rows = [
            (result.times[i], result.mean_abs_error[i])
            for i in range(result.times.shape[0])
        ]
        run.write_csv("error_mean.csv", ("time", "mean_abs_error"), err_rows)
    fit = result.fit
    run.write_json(
        "fit.json",
        {
            "log_squared": {
                "a": fit.coef_ln2[0],
                "b": fit.coef_ln2[1],
                "c": fit.coef_ln2[2],
                "rss": fit.rss_ln2,
            },
            "log": {"a": fit.coef_ln[0], "c": fit.coef_ln[1], "rss": fit.rss_ln},
            "linear": {"a": fit.coef_linear[0], "c": fit.coef_linear[1], "rss": fit.rss_linear},
            "preferred": fit.preferred,
        },
    )
    print(f"preferred fit = {fit.preferred}")
    print(f"final mean regret = {result.mean_regret[-1]:.10g}")


def cmd_experiment_equilibrium(cfg, run: RunDir, seed: int, threads: int) -> None:
    params = _model_params(cfg)
    policy, eff_est = build_policy(cfg["experiment"]["policy"].strip(), _estimator_config(cfg))
    if eff_est is not None:
        raise ConfigError(
            "equilibrium study needs a static policy: ergodic, ergodic:<kappa>, "
            "or fixed:<depth>"
        )
    t_grid = _as_float_list(cfg, "experiment", "t_grid")
    if not t_grid:
        raise ConfigError("experiment.t_grid must not be empty")
    result = equilibrium_convergence_study(
        params,
        policy,
        t_grid=np.asarray(t_grid),
        scenarios=_as_int(cfg, "experiment", "scenarios"),
        master_seed=seed,
        bootstrap=_as_int(cfg, "experiment", "bootstrap"),
    )
    rows = [(result.t_grid[i], result.tv[i]) for i in range(result.t_grid.shape[0])]
    run.write_csv("tv.csv", ("time", "tv"), rows)
    lo, hi = np.quantile(result.bootstrap_slopes, (0.01, 0.99))
    run.write_json(
        "convergence.json",
        {
            "slope": result.slope,
            "bootstrap_slope_q01": float(lo),
            "bootstrap_slope_q99": float(hi),
            "noise_floor": result.floor_estimate,
            "used_points": int(result.used_points.sum()),
        },
    )
    print(f"decay slope = {result.slope:.6g} (bootstrap 99% upper {hi:.6g})")


def cmd_experiment_nonstationary(cfg, run: RunDir, seed: int, threads: int) -> None:
    ec = _experiment_config(cfg, seed, threads)
    if ec.schedule is None:
        raise ConfigError("nonstationary experiment requires a [schedule] section")
    result = nonstationary_experiment(ec)
    for tag, mc in (("sw", result.sliding_window), ("ewma", result.ewma)):
        rows = [
            (mc.times[i], mc.mean_regret[i], mc.ci_low[i], mc.ci_high[i])
            for i in range(mc.times.shape[0])
        ]
        run.write_csv(f"regret_mean_{tag}.csv", ("time", "mean", "ci_low", "ci_high"), rows)
        err_rows = [(mc.times[i], mc.mean_abs_error[i]) for i in range(mc.times.shape[0])]
        run.write_csv(f"error_mean_{tag}.csv", ("time", "mean_abs_error"), err_rows)
    print(f"final tracking error sw = {result.sliding_window.mean_abs_error[-1]:.6g}")
    print(f"final tracking error ewma = {result.ewma.mean_abs_error[-1]:.6g}")


def cmd_experiment_sweep(cfg, run: RunDir, seed: int, threads: int) -> None:
    result = c1_dependency_sweep(
        _experiment_config(cfg, seed, threads),
        phi_grid=tuple(_as_float_list(cfg, "experiment", "phi_grid")),
        lambda_grid=tuple(_as_float_list(cfg, "experiment", "lambda_grid")),
        kbar_grid=tuple(_as_float_list(cfg, "experiment", "kbar_grid")),
        kappa0_grid=tuple(_as_float_list(cfg, "experiment", "kappa0_grid")),
    )
    run.write_csv(
        "sweep_c1_phi_lambda.csv",
        ("phi", "lambda", "c1"),
        [tuple(row) for row in result.table_phi_lambda],
    )
    run.write_csv(
        "sweep_c1_kbar_kappa0.csv",
        ("k_upper", "kappa_init", "c1"),
        [tuple(row) for row in result.table_kbar_kappa0],
    )


def cmd_experiment_consistency(cfg, run: RunDir, seed: int, threads: int) -> None:
    params = _model_params(cfg)
    sizes = _as_int_list(cfg, "experiment", "sample_sizes")
    if not sizes:
        raise ConfigError("experiment.sample_sizes must not be empty")
    result = consistency_experiment(
        kappa_star=params.kappa,
        sample_sizes=tuple(sizes),
        replications=_as_int(cfg, "experiment", "replications"),
        rng=make_rng(RngSpec(master_seed=seed, scenario=0), purpose=1),
        config=_estimator_config(cfg),
    )
    rows = [
        (int(result.sample_sizes[i]), result.p90_errors[i])
        for i in range(len(result.sample_sizes))
    ]
    run.write_csv("consistency.csv", ("n", "p90_abs_error"), rows)
    run.write_json("consistency.json", {"slope": result.slope})
    print(f"p90 error slope = {result.slope:.6g}")


# ------------------------------------------------------------------ driver


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ergodicmm",
        description="closed-form market-making control with online intensity learning",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key=value configuration file")
    common.add_argument("--seed", type=int, metavar="U64", help="master seed (default: entropy)")
    common.add_argument(
        "--threads",
        type=int,
        default=None,
        metavar="N",
        help="worker processes (default: machine parallelism)",
    )
    common.add_argument("--out", default="ergodicmm_out", metavar="DIR", help="output directory")
    common.add_argument(
        "--set",
        action="append",
        dest="sets",
        metavar="KEY=VALUE",
        help="override one config entry, e.g. model.kappa=12; repeatable",
    )

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="stationary policy and equilibrium")
    sim = sub.add_parser("simulate", parents=[common], help="one controlled trajectory")
    sim.add_argument(
        "--policy",
        metavar="SELECTOR",
        help="shorthand for --set experiment.policy=SELECTOR",
    )
    sub.add_parser("misspec-gamma", parents=[common], help="long-run reward under mismatch")
    sub.add_parser("finite-horizon", parents=[common], help="value per unit time")
    exp = sub.add_parser("experiment", parents=[common], help="Monte Carlo studies")
    exp.add_argument(
        "study",
        choices=["regret", "equilibrium", "nonstationary", "sweep-c1", "mle-consistency"],
    )
    return parser


def _dispatch(ns, cfg, run: RunDir, seed: int, threads: int) -> None:
    if ns.command == "solve":
        cmd_solve(cfg, run, seed)
    elif ns.command == "simulate":
        cmd_simulate(cfg, run, seed)
    elif ns.command == "misspec-gamma":
        cmd_misspec_gamma(cfg, run, seed)
    elif ns.command == "finite-horizon":
        cmd_finite_horizon(cfg, run, seed)
    elif ns.command == "experiment":
        handlers = {
            "regret": cmd_experiment_regret,
            "equilibrium": cmd_experiment_equilibrium,
            "nonstationary": cmd_experiment_nonstationary,
            "sweep-c1": cmd_experiment_sweep,
            "mle-consistency": cmd_experiment_consistency,
        }
        handlers[ns.study](cfg, run, seed, threads)
    else:  # argparse enforces the choices; defensive
        raise ConfigError(f"unknown command {ns.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    run = None
    try:
        cfg = _load_config(ns.config, ns.sets)
        if getattr(ns, "policy", None) is not None:
            cfg["experiment"]["policy"] = ns.policy
        threads = ns.threads if ns.threads is not None else max(1, os.cpu_count() or 1)
        if threads < 1:
            raise ConfigError("--threads must be at least 1")
        seed = _resolve_seed(ns)
        run = RunDir(ns.out)
        _dispatch(ns, cfg, run, seed, threads)
        command = ns.command if ns.command != "experiment" else f"experiment {ns.study}"
        run.write_manifest(
            command=command,
            version=__version__,
            master_seed=seed,
            config=_config_snapshot(cfg),
        )
        return 0
    except (ConfigError, PolicyError, OrderingError, DomainError) as exc:
        if run is not None:
            run.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, StructureError, IrreducibilityError, ErgodicMMError) as exc:
        if run is not None:
            run.cleanup()
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        if run is not None:
            run.cleanup()
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
