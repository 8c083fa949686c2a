"""Monte Carlo experiments: regret growth, equilibrium convergence, tracking.

Regret of a policy at time t is the oracle reward Gamma(t) = integral of
the per-regime optimal reward rate, minus the policy's accumulated reward
integral.  Experiments aggregate scenario curves sampled on a common
geometric time grid, fit the mean regret against candidate growth shapes
(a ln^2 t, a ln t, and linear), and study how fast the controlled
inventory chain reaches its equilibrium law.

Scenario s of an experiment draws its randomness from the branch
(master_seed, scenario=s), so runs are reproducible event for event and
independent of worker count.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import hjb_core, market_sim
from .errors import ConfigError, DomainError, PolicyError, StructureError
from .estimator import EstimatorConfig
from .hjb_core import ModelParams, ergodic_constant
from .market_sim import (
    ErgodicPolicy,
    FixedDepthPolicy,
    LearnedErgodicPolicy,
    MyopicPolicy,
    RngSpec,
    simulate,
)

__all__ = [
    "ExperimentConfig",
    "MonteCarloResult",
    "FitResult",
    "ConvergenceResult",
    "NonstationaryResult",
    "SweepResult",
    "build_policy",
    "time_grid",
    "regret_trajectory",
    "monte_carlo",
    "fit_regret_curves",
    "equilibrium_convergence_study",
    "nonstationary_experiment",
    "c1_dependency_sweep",
]

_PURPOSE_BOOTSTRAP = 2

_DEFAULT_WINDOW = 30.0
_DEFAULT_EWMA_ALPHA = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo experiment: model truth, policy selector, sampling plan.

    model.kappa is the true decay rate (the schedule overrides it in
    time).  policy is a selector string: "ergodic" (oracle),
    "ergodic:<kappa>", "fixed:<depth>", "myopic", "learn:full",
    "learn:sw", "learn:ewma".
    """

    model: ModelParams
    policy: str
    horizon: float
    scenarios: int
    master_seed: int
    estimator: EstimatorConfig | None = None
    schedule: tuple[tuple[float, float], ...] | None = None
    q0: int = 0
    grid_points: int = 200
    transient_cutoff: float = 10.0
    eval_times: tuple[float, ...] | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        if not (self.horizon > 0.0 and math.isfinite(self.horizon)):
            raise DomainError(f"horizon must be finite and > 0, got {self.horizon}")
        if self.scenarios < 2:
            raise DomainError("scenarios must be >= 2")
        if self.master_seed < 0:
            raise DomainError("master_seed must be nonnegative")
        if self.grid_points < 2:
            raise DomainError("grid_points must be >= 2")
        if self.workers < 1:
            raise DomainError("workers must be >= 1")


@dataclass(frozen=True)
class FitResult:
    """Least-squares fits of a mean regret curve against three growth shapes.

    coef_ln2 is (a, b, c) for a ln^2 t + b ln t + c; coef_ln is (a, c)
    for a ln t + c; coef_linear is (a, c) for a t + c.  preferred names
    the best model by residual sum of squares, except that an exact ln
    fit beats the ln^2 model that nests it.
    """

    coef_ln2: tuple[float, float, float]
    rss_ln2: float
    coef_ln: tuple[float, float]
    rss_ln: float
    coef_linear: tuple[float, float]
    rss_linear: float
    preferred: str


@dataclass(frozen=True)
class MonteCarloResult:
    times: np.ndarray
    mean_regret: np.ndarray
    sd_regret: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    regret_samples: np.ndarray
    mean_abs_error: np.ndarray | None
    fit: FitResult
    scenarios: int


@dataclass(frozen=True)
class ConvergenceResult:
    t_grid: np.ndarray
    tv: np.ndarray
    equilibrium: np.ndarray
    slope: float
    bootstrap_slopes: np.ndarray
    floor_estimate: float
    used_points: np.ndarray


@dataclass(frozen=True)
class NonstationaryResult:
    times: np.ndarray
    schedule: tuple[tuple[float, float], ...]
    sliding_window: MonteCarloResult
    ewma: MonteCarloResult


@dataclass(frozen=True)
class SweepResult:
    """Fitted ln^2 coefficients over two parameter tables.

    Rows of table_phi_lambda are (phi, lambda, c1); rows of
    table_kbar_kappa0 are (k_upper, kappa_init, c1).
    """

    table_phi_lambda: np.ndarray
    table_kbar_kappa0: np.ndarray


def build_policy(
    selector: str, estimator: EstimatorConfig | None
) -> tuple[market_sim.QuotingPolicy, EstimatorConfig | None]:
    """Policy instance and effective estimator config for a selector string.

    Learning selectors force the matching estimator mode, filling in the
    default window or decay when the base config leaves them unset.
    Non-learning selectors never attach an estimator.
    """
    base = estimator if estimator is not None else EstimatorConfig()
    if selector == "ergodic":
        return ErgodicPolicy(None), None
    if selector.startswith("ergodic:"):
        try:
            k = float(selector.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"bad policy selector {selector!r}") from exc
        return ErgodicPolicy(k), None
    if selector.startswith("fixed:"):
        try:
            d = float(selector.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"bad policy selector {selector!r}") from exc
        return FixedDepthPolicy(d), None
    if selector == "myopic":
        return MyopicPolicy(), dataclasses.replace(base, mode="full")
    if selector == "learn:full":
        return LearnedErgodicPolicy(), dataclasses.replace(base, mode="full")
    if selector == "learn:sw":
        w = base.window if base.window is not None else _DEFAULT_WINDOW
        return LearnedErgodicPolicy(), dataclasses.replace(
            base, mode="sliding_window", window=w
        )
    if selector == "learn:ewma":
        a = base.ewma_alpha if base.ewma_alpha is not None else _DEFAULT_EWMA_ALPHA
        return LearnedErgodicPolicy(), dataclasses.replace(
            base, mode="ewma", ewma_alpha=a
        )
    raise ConfigError(f"unknown policy selector {selector!r}")


def time_grid(horizon: float, points: int = 200) -> np.ndarray:
    """Zero plus a geometric grid from horizon/1000 to the horizon."""
    if not (horizon > 0.0 and math.isfinite(horizon)):
        raise DomainError(f"horizon must be finite and > 0, got {horizon}")
    g = np.geomspace(horizon / 1000.0, horizon, points)
    g[-1] = horizon
    return np.concatenate(([0.0], g))


def _gamma_segments(params: ModelParams, sched_t, sched_k):
    """Per-regime optimal reward rates and their cumulative integral knots."""
    gammas = np.asarray(
        [
            ergodic_constant(dataclasses.replace(params, kappa=float(k)))
            for k in sched_k
        ]
    )
    knots = np.zeros(sched_t.shape[0])
    for j in range(1, sched_t.shape[0]):
        knots[j] = knots[j - 1] + gammas[j - 1] * (sched_t[j] - sched_t[j - 1])
    return gammas, knots


def _cumulative_gamma(times, sched_t, gammas, knots):
    idx = np.clip(np.searchsorted(sched_t, times, side="right") - 1, 0, None)
    return knots[idx] + gammas[idx] * (times - sched_t[idx])


def _rewards_on_grid(traj: market_sim.TrajectoryRecord, times: np.ndarray) -> np.ndarray:
    return np.asarray([traj.reward_at(float(t)) for t in times])


def regret_trajectory(
    traj: market_sim.TrajectoryRecord,
    gamma_star: float | None = None,
    times: np.ndarray | None = None,
) -> np.ndarray:
    """Rows (t, regret(t)) for one trajectory.

    gamma_star overrides the oracle rate with a constant; by default the
    rate is derived per scheduled regime from the trajectory's own model
    parameters.  regret(0) is exactly 0.
    """
    if times is None:
        times = time_grid(traj.horizon)
    else:
        times = np.asarray(times, dtype=float)
        if np.any(times < 0.0) or np.any(times > traj.horizon):
            raise DomainError("evaluation times must lie in [0, horizon]")
    if gamma_star is None:
        gammas, knots = _gamma_segments(
            traj.params, traj.schedule_times, traj.schedule_kappas
        )
        oracle = _cumulative_gamma(times, traj.schedule_times, gammas, knots)
    else:
        oracle = gamma_star * times
    return np.column_stack([times, oracle - _rewards_on_grid(traj, times)])


def _error_on_grid(traj, times, sched_t, sched_k):
    idx = np.searchsorted(traj.times, times, side="right") - 1
    if traj.kappa_hat is None or traj.kappa_hat.shape[0] == 0:
        khat = np.full(times.shape[0], traj.init_kappa_hat)
    else:
        khat = np.where(idx < 0, traj.init_kappa_hat, traj.kappa_hat[np.clip(idx, 0, None)])
    jdx = np.clip(np.searchsorted(sched_t, times, side="right") - 1, 0, None)
    return np.abs(khat - sched_k[jdx])


def _scenario_curves(config: ExperimentConfig, times, gammas, knots, s: int):
    policy, est_cfg = build_policy(config.policy, config.estimator)
    traj = simulate(
        config.model,
        policy,
        config.horizon,
        RngSpec(config.master_seed, scenario=s),
        estimator=est_cfg,
        q0=config.q0,
        schedule=config.schedule,
    )
    oracle = _cumulative_gamma(times, traj.schedule_times, gammas, knots)
    regret = oracle - _rewards_on_grid(traj, times)
    if est_cfg is not None:
        err = _error_on_grid(traj, times, traj.schedule_times, traj.schedule_kappas)
    else:
        err = None
    return regret, err


def _scenario_job(args):
    config, times, gammas, knots, s = args
    return s, _scenario_curves(config, times, gammas, knots, s)


def monte_carlo(config: ExperimentConfig) -> MonteCarloResult:
    """Mean regret curve with a normal-approximation 95% band, the mean
    absolute estimation error when the policy learns, and growth-shape fits."""
    if config.eval_times is not None:
        times = np.asarray(config.eval_times, dtype=float)
        if times.ndim != 1 or times.shape[0] < 2 or np.any(np.diff(times) <= 0):
            raise DomainError("eval_times must be increasing with at least 2 entries")
        if times[0] != 0.0:
            times = np.concatenate(([0.0], times))
        if np.any(times > config.horizon):
            raise DomainError("eval_times must not exceed the horizon")
    else:
        times = time_grid(config.horizon, config.grid_points)

    sched_t, sched_k = market_sim._validate_schedule(
        list(config.schedule) if config.schedule is not None else None, config.model
    )
    gammas, knots = _gamma_segments(config.model, sched_t, sched_k)

    S = config.scenarios
    G = times.shape[0]
    regrets = np.empty((S, G))
    errors = None

    if config.workers > 1:
        jobs = [(config, times, gammas, knots, s) for s in range(S)]
        with concurrent.futures.ProcessPoolExecutor(max_workers=config.workers) as ex:
            for s, (reg, err) in ex.map(
                _scenario_job, jobs, chunksize=max(1, S // (config.workers * 4))
            ):
                regrets[s] = reg
                if err is not None:
                    if errors is None:
                        errors = np.empty((S, G))
                    errors[s] = err
    else:
        for s in range(S):
            reg, err = _scenario_curves(config, times, gammas, knots, s)
            regrets[s] = reg
            if err is not None:
                if errors is None:
                    errors = np.empty((S, G))
                errors[s] = err

    mean = regrets.mean(axis=0)
    sd = regrets.std(axis=0, ddof=1)
    half = 1.96 * sd / math.sqrt(S)
    fit = fit_regret_curves(times, mean, config.transient_cutoff)
    return MonteCarloResult(
        times=times,
        mean_regret=mean,
        sd_regret=sd,
        ci_low=mean - half,
        ci_high=mean + half,
        regret_samples=regrets,
        mean_abs_error=errors.mean(axis=0) if errors is not None else None,
        fit=fit,
        scenarios=S,
    )


def fit_regret_curves(
    times: np.ndarray, mean_regret: np.ndarray, transient_cutoff: float = 10.0
) -> FitResult:
    """Fit the mean curve beyond the transient against the three shapes.

    Requires at least 10 points at t >= transient_cutoff.  The preferred
    model minimises the residual sum of squares, except that when the
    two-parameter ln model already fits to within rounding of the total
    sum of squares it wins over the ln^2 model that contains it.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(mean_regret, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise StructureError("times and mean_regret must be 1-d arrays of equal length")
    mask = t >= transient_cutoff
    if int(mask.sum()) < 10:
        raise DomainError(
            f"need at least 10 points at t >= {transient_cutoff} to fit, "
            f"got {int(mask.sum())}"
        )
    tt = t[mask]
    yy = y[mask]
    L = np.log(tt)

    def _fit(X):
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise DomainError("degenerate fit design")
        coef, *_ = np.linalg.lstsq(X, yy, rcond=None)
        rss = float(np.sum((yy - X @ coef) ** 2))
        return coef, rss

    c2, r2 = _fit(np.column_stack([L * L, L, np.ones_like(L)]))
    c1, r1 = _fit(np.column_stack([L, np.ones_like(L)]))
    c0, r0 = _fit(np.column_stack([tt, np.ones_like(tt)]))

    tss = float(np.sum((yy - yy.mean()) ** 2))
    tol = 1e-12 * max(tss, 1e-300)
    if r1 <= tol:
        preferred = "ln"
    else:
        preferred = min(
            (("ln2", r2), ("ln", r1), ("linear", r0)), key=lambda kv: kv[1]
        )[0]
    return FitResult(
        coef_ln2=tuple(float(v) for v in c2),
        rss_ln2=r2,
        coef_ln=tuple(float(v) for v in c1),
        rss_ln=r1,
        coef_linear=tuple(float(v) for v in c0),
        rss_linear=r0,
        preferred=preferred,
    )


def equilibrium_convergence_study(
    params: ModelParams,
    policy: market_sim.QuotingPolicy,
    t_grid: np.ndarray,
    scenarios: int,
    master_seed: int,
    bootstrap: int = 1000,
) -> ConvergenceResult:
    """Total-variation distance of the empirical inventory law to equilibrium.

    Requires a policy with fixed depth tables.  The decay slope of ln TV
    against t is fitted over the grid points that sit clearly above the
    finite-sample noise floor (estimated as the median TV over the last
    quarter of the grid); at least the first three points are always
    used.  Bootstrap resampling of scenarios gives the slope's sampling
    distribution.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.shape[0] < 3:
        raise DomainError("t_grid must contain at least 3 times")
    if np.any(np.diff(t_grid) <= 0) or t_grid[0] <= 0.0:
        raise DomainError("t_grid must be positive and strictly increasing")
    if scenarios < 2:
        raise DomainError("scenarios must be >= 2")
    tables = policy.static_tables(params)
    if tables is None:
        raise PolicyError("equilibrium study requires a policy with fixed tables")
    ask, bid = tables
    n = params.n
    ask = np.asarray(ask, dtype=float).copy()
    bid = np.asarray(bid, dtype=float).copy()
    ask[n - 1] = math.inf
    bid[0] = math.inf
    rm = hjb_core.transition_rate_matrix(ask, bid, params.kappa, params)
    pi = hjb_core.equilibrium_distribution(rm)

    grid = params.grid
    horizon = float(t_grid[-1])
    G = t_grid.shape[0]
    states_at = np.empty((scenarios, G), dtype=np.int16)
    for s in range(scenarios):
        traj = simulate(params, policy, horizon, RngSpec(master_seed, scenario=s))
        for g, t in enumerate(t_grid):
            states_at[s, g] = grid.index_of(traj.inventory_at(float(t)))

    def _tv_curve(rows: np.ndarray) -> np.ndarray:
        out = np.empty(G)
        m = rows.shape[0]
        for g in range(G):
            counts = np.bincount(rows[:, g], minlength=n)
            out[g] = 0.5 * np.abs(counts / m - pi).sum()
        return out

    tv = _tv_curve(states_at)

    quarter = max(1, G // 4)
    floor = float(np.median(tv[-quarter:]))
    used = tv > 2.0 * floor
    if int(used.sum()) < 3:
        used = np.zeros(G, dtype=bool)
        used[:3] = True

    def _slope(curve: np.ndarray) -> float:
        yy = np.log(np.maximum(curve[used], 1e-300))
        X = np.column_stack([t_grid[used], np.ones(int(used.sum()))])
        coef, *_ = np.linalg.lstsq(X, yy, rcond=None)
        return float(coef[0])

    slope = _slope(tv)
    boot_rng = market_sim.make_rng(
        RngSpec(master_seed, scenario=0), purpose=_PURPOSE_BOOTSTRAP
    )
    boot = np.empty(bootstrap)
    for b in range(bootstrap):
        idx = boot_rng.integers(0, scenarios, size=scenarios)
        boot[b] = _slope(_tv_curve(states_at[idx]))
    return ConvergenceResult(
        t_grid=t_grid,
        tv=tv,
        equilibrium=pi,
        slope=slope,
        bootstrap_slopes=boot,
        floor_estimate=floor,
        used_points=used,
    )


def nonstationary_experiment(config: ExperimentConfig) -> NonstationaryResult:
    """Tracking comparison of the window and decay estimators under a schedule."""
    if config.schedule is None or len(config.schedule) < 2:
        raise DomainError("nonstationary experiment requires a schedule with >= 2 regimes")
    sw = monte_carlo(dataclasses.replace(config, policy="learn:sw"))
    ew = monte_carlo(dataclasses.replace(config, policy="learn:ewma"))
    return NonstationaryResult(
        times=sw.times,
        schedule=tuple(config.schedule),
        sliding_window=sw,
        ewma=ew,
    )


def c1_dependency_sweep(
    base: ExperimentConfig,
    phi_grid=(1e-6, 1e-5, 1e-4),
    lambda_grid=(0.4, 0.7, 1.0),
    kbar_grid=(20.0, 50.0, 100.0),
    kappa0_grid=(10.0, 40.0, 80.0),
) -> SweepResult:
    """Fitted ln^2 regret coefficient over two parameter tables.

    Table one varies the inventory penalty and the arrival rate (both
    sides equal); table two varies the upper truncation bound and the
    initial estimate.  Every cell reruns the base experiment with only
    that pair changed; the reported c1 is the ln^2 coefficient of the
    three-parameter fit.
    """
    base_est = base.estimator if base.estimator is not None else EstimatorConfig()

    rows_pl = []
    for phi in phi_grid:
        for lam in lambda_grid:
            model = dataclasses.replace(
                base.model, phi=float(phi), lambda_plus=float(lam), lambda_minus=float(lam)
            )
            cfg = dataclasses.replace(base, model=model, estimator=base_est)
            res = monte_carlo(cfg)
            rows_pl.append((float(phi), float(lam), res.fit.coef_ln2[0]))

    rows_kk = []
    for kbar in kbar_grid:
        for k0 in kappa0_grid:
            est = dataclasses.replace(
                base_est, k_upper=float(kbar), kappa_init=float(k0)
            )
            cfg = dataclasses.replace(base, estimator=est)
            res = monte_carlo(cfg)
            rows_kk.append((float(kbar), float(k0), res.fit.coef_ln2[0]))

    return SweepResult(
        table_phi_lambda=np.asarray(rows_pl),
        table_kbar_kappa0=np.asarray(rows_kk),
    )
