"""Tests for the Monte Carlo regret experiments.

Statistical assertions run on fixed seeds at small scenario counts, with
windows and tolerances probed to hold with margin.  The fixed-belief
slope reference 0.00045685142853151006 is the frozen difference of the
two long-run reward rates involved, from a dense independent eigensolve.
"""

import dataclasses
import math

import numpy as np
import pytest

from ergodicmm.errors import ConfigError, DomainError, PolicyError, StructureError
from ergodicmm.estimator import EstimatorConfig
from ergodicmm.hjb_core import ModelParams, ergodic_constant
from ergodicmm.market_sim import (
    ErgodicPolicy,
    FixedDepthPolicy,
    LearnedErgodicPolicy,
    MyopicPolicy,
    RngSpec,
    simulate,
)
from ergodicmm.regret_lab import (
    ExperimentConfig,
    build_policy,
    c1_dependency_sweep,
    equilibrium_convergence_study,
    fit_regret_curves,
    monte_carlo,
    nonstationary_experiment,
    regret_trajectory,
    time_grid,
)

LEARN = ModelParams(
    lambda_plus=0.4, lambda_minus=0.4, kappa=10.0, phi=1e-6, q_max=30, q_min=-30
)
GAMMA_GAP_12 = 0.00045685142853151006


def test_experiment_config_validation():
    ok = dict(model=LEARN, policy="ergodic", horizon=10.0, scenarios=2, master_seed=0)
    ExperimentConfig(**ok)
    with pytest.raises(DomainError):
        ExperimentConfig(**{**ok, "horizon": 0.0})
    with pytest.raises(DomainError):
        ExperimentConfig(**{**ok, "scenarios": 1})
    with pytest.raises(DomainError):
        ExperimentConfig(**{**ok, "master_seed": -1})
    with pytest.raises(DomainError):
        ExperimentConfig(**{**ok, "grid_points": 1})
    with pytest.raises(DomainError):
        ExperimentConfig(**{**ok, "workers": 0})


def test_time_grid():
    g = time_grid(1000.0, 200)
    assert g.shape == (201,)
    assert g[0] == 0.0
    assert g[1] == 1.0
    assert g[-1] == 1000.0
    ratios = g[2:] / g[1:-1]
    assert np.allclose(ratios, ratios[0], rtol=1e-9)
    with pytest.raises(DomainError):
        time_grid(0.0)


def test_build_policy_selectors():
    p, est = build_policy("ergodic", None)
    assert isinstance(p, ErgodicPolicy) and p.kappa is None and est is None
    p, est = build_policy("ergodic:12.5", None)
    assert isinstance(p, ErgodicPolicy) and p.kappa == 12.5 and est is None
    p, est = build_policy("fixed:0.2", None)
    assert isinstance(p, FixedDepthPolicy) and p.depth == 0.2 and est is None
    p, est = build_policy("myopic", None)
    assert isinstance(p, MyopicPolicy) and est.mode == "full"
    p, est = build_policy("learn:full", EstimatorConfig(delta0=0.07))
    assert isinstance(p, LearnedErgodicPolicy)
    assert est.mode == "full" and est.delta0 == 0.07
    p, est = build_policy("learn:sw", None)
    assert est.mode == "sliding_window" and est.window == 30.0
    p, est = build_policy("learn:sw", EstimatorConfig(window=12.0))
    assert est.window == 12.0
    p, est = build_policy("learn:ewma", None)
    assert est.mode == "ewma" and est.ewma_alpha == 0.1
    for bad in ("learn:off", "ergodic:abc", "fixed:", "unknown"):
        with pytest.raises(ConfigError):
            build_policy(bad, None)


def test_fit_ln2_exact():
    t = np.concatenate([[0.0], np.geomspace(1.0, 1000.0, 40)])
    y = 3.0 * np.log(np.maximum(t, 1e-12)) ** 2 + 2.0 * np.log(np.maximum(t, 1e-12)) + 1.0
    y[0] = 0.0
    fit = fit_regret_curves(t, y)
    assert fit.coef_ln2 == pytest.approx((3.0, 2.0, 1.0), abs=1e-8)
    assert fit.rss_ln2 < 1e-16
    assert fit.preferred == "ln2"


def test_fit_linear_exact():
    t = np.geomspace(10.0, 1000.0, 30)
    fit = fit_regret_curves(t, 0.25 * t + 3.0)
    assert fit.coef_linear == pytest.approx((0.25, 3.0), abs=1e-9)
    assert fit.rss_linear < 1e-16
    assert fit.preferred == "linear"


def test_fit_pure_ln_wins_by_parsimony():
    # an exact a ln t + c curve is also fit exactly by the ln^2 family;
    # the two-parameter model is reported
    t = np.geomspace(10.0, 1000.0, 30)
    fit = fit_regret_curves(t, 2.0 * np.log(t) + 0.5)
    assert fit.rss_ln < 1e-16
    assert fit.preferred == "ln"
    assert fit.coef_ln == pytest.approx((2.0, 0.5), abs=1e-9)


def test_fit_validation():
    t = np.geomspace(10.0, 1000.0, 30)
    with pytest.raises(StructureError):
        fit_regret_curves(t, np.zeros((2, 30)))
    with pytest.raises(DomainError, match="need at least 10 points"):
        fit_regret_curves(np.linspace(0.0, 9.0, 50), np.zeros(50))


def test_regret_trajectory_identity():
    # regret + accumulated reward must equal the oracle integral, regime
    # by regime
    traj = simulate(
        LEARN,
        FixedDepthPolicy(0.15),
        12.0,
        rng=RngSpec(808, 0),
        schedule=[(0.0, 20.0), (5.0, 30.0)],
    )
    probes = np.array([0.0, 3.0, 5.0, 9.0, 12.0])
    rows = regret_trajectory(traj, times=probes)
    assert rows.shape == (5, 2)
    assert rows[0, 1] == 0.0
    g20 = ergodic_constant(dataclasses.replace(LEARN, kappa=20.0))
    g30 = ergodic_constant(dataclasses.replace(LEARN, kappa=30.0))
    for t, regret in rows:
        oracle = g20 * min(t, 5.0) + g30 * max(0.0, t - 5.0)
        assert regret + traj.reward_at(t) == pytest.approx(oracle, abs=1e-12)
    # constant-rate override
    rows = regret_trajectory(traj, gamma_star=0.5, times=probes)
    assert rows[2, 1] == pytest.approx(0.5 * 5.0 - traj.reward_at(5.0), abs=1e-12)
    with pytest.raises(DomainError):
        regret_trajectory(traj, times=np.array([5.0, 20.0]))


def test_oracle_policy_regret_stays_near_zero():
    cfg = ExperimentConfig(
        model=LEARN, policy="ergodic", horizon=200.0, scenarios=40,
        master_seed=1001, grid_points=60,
    )
    res = monte_carlo(cfg)
    assert res.mean_abs_error is None
    assert abs(res.mean_regret[-1]) < 0.1
    gamma_t = ergodic_constant(LEARN) * 200.0
    assert abs(res.mean_regret[-1]) < 0.02 * gamma_t
    assert np.all(res.ci_low <= res.mean_regret) and np.all(res.mean_regret <= res.ci_high)
    assert res.regret_samples.shape == (40, res.times.shape[0])


def test_fixed_belief_regret_slope_matches_gamma_gap():
    # quoting for kappa = 12 in a kappa = 10 market loses reward at the
    # difference of the two long-run rates; the local slope reaches that
    # rate only after the inventory chain mixes, hence the [500, 1000]
    # window
    times = np.unique(np.concatenate([time_grid(1000.0, 60), [500.0, 1000.0]]))
    cfg = ExperimentConfig(
        model=LEARN, policy="ergodic:12", horizon=1000.0, scenarios=100,
        master_seed=1002, eval_times=tuple(times),
    )
    res = monte_carlo(cfg)
    a = int(np.searchsorted(res.times, 500.0))
    b = res.times.shape[0] - 1
    assert res.times[a] == 500.0 and res.times[b] == 1000.0
    slope = (res.mean_regret[b] - res.mean_regret[a]) / 500.0
    per_scenario = (res.regret_samples[:, b] - res.regret_samples[:, a]) / 500.0
    se = per_scenario.std(ddof=1) / math.sqrt(100)
    assert abs(slope - GAMMA_GAP_12) < 3.0 * se


def test_learned_policy_experiment():
    cfg = ExperimentConfig(
        model=LEARN, policy="learn:full", horizon=300.0, scenarios=20,
        master_seed=515, grid_points=60,
    )
    res = monte_carlo(cfg)
    assert res.mean_abs_error is not None
    # estimate starts at the initial guess 50, i.e. error 40, and learns
    assert res.mean_abs_error[0] == 40.0
    assert res.mean_abs_error[-1] < 2.0
    assert res.fit.preferred == "ln2"
    assert res.mean_regret[-1] > 0.0


def test_monte_carlo_eval_times():
    base = dict(model=LEARN, policy="ergodic", horizon=50.0, scenarios=3, master_seed=4)
    times = tuple(np.linspace(1.0, 50.0, 25))
    res = monte_carlo(ExperimentConfig(**base, eval_times=times))
    assert res.times[0] == 0.0
    assert np.array_equal(res.times[1:], np.asarray(times))
    with pytest.raises(DomainError):
        monte_carlo(ExperimentConfig(**base, eval_times=(5.0, 4.0, 30.0, 40.0)))
    with pytest.raises(DomainError):
        monte_carlo(ExperimentConfig(**base, eval_times=(5.0, 60.0)))


def test_monte_carlo_worker_invariance():
    base = dict(
        model=LEARN, policy="ergodic", horizon=60.0, scenarios=6,
        master_seed=99, grid_points=60,
    )
    serial = monte_carlo(ExperimentConfig(**base, workers=1))
    parallel = monte_carlo(ExperimentConfig(**base, workers=2))
    assert np.array_equal(serial.regret_samples, parallel.regret_samples)
    assert np.array_equal(serial.mean_regret, parallel.mean_regret)


def test_equilibrium_convergence_study():
    params = ModelParams(
        lambda_plus=1.0, lambda_minus=1.0, kappa=10.0, phi=1e-3, q_max=4, q_min=-4
    )
    grid = np.geomspace(1.0, 64.0, 7)
    res = equilibrium_convergence_study(
        params, ErgodicPolicy(), grid, scenarios=200, master_seed=424, bootstrap=200
    )
    assert res.tv.shape == (7,)
    assert res.equilibrium.sum() == pytest.approx(1.0, abs=1e-12)
    assert res.tv[0] > 3.0 * res.floor_estimate
    assert res.slope < 0.0
    assert np.quantile(res.bootstrap_slopes, 0.99) < 0.0
    assert res.used_points.sum() >= 3
    again = equilibrium_convergence_study(
        params, ErgodicPolicy(), grid, scenarios=200, master_seed=424, bootstrap=200
    )
    assert np.array_equal(res.tv, again.tv)
    assert res.slope == again.slope


def test_equilibrium_study_validation():
    params = ModelParams(
        lambda_plus=1.0, lambda_minus=1.0, kappa=10.0, phi=1e-3, q_max=4, q_min=-4
    )
    grid = np.geomspace(1.0, 16.0, 5)
    with pytest.raises(PolicyError):
        equilibrium_convergence_study(params, MyopicPolicy(), grid, 10, 1)
    with pytest.raises(DomainError):
        equilibrium_convergence_study(params, ErgodicPolicy(), np.array([1.0, 2.0]), 10, 1)
    with pytest.raises(DomainError):
        equilibrium_convergence_study(params, ErgodicPolicy(), np.array([0.0, 1.0, 2.0]), 10, 1)
    with pytest.raises(DomainError):
        equilibrium_convergence_study(params, ErgodicPolicy(), grid, 1, 1)


def test_nonstationary_experiment():
    cfg = ExperimentConfig(
        model=LEARN, policy="learn:sw", horizon=120.0, scenarios=10,
        master_seed=616, grid_points=50, schedule=((0.0, 20.0), (60.0, 35.0)),
        eval_times=tuple(np.unique(np.concatenate([time_grid(120.0, 50), [59.0, 61.0]]))),
    )
    res = nonstationary_experiment(cfg)
    assert res.schedule == ((0.0, 20.0), (60.0, 35.0))
    assert np.array_equal(res.times, res.sliding_window.times)
    assert np.array_equal(res.times, res.ewma.times)
    for arm in (res.sliding_window, res.ewma):
        assert arm.mean_abs_error is not None
        i_before = int(np.searchsorted(arm.times, 59.0))
        i_after = int(np.searchsorted(arm.times, 61.0))
        assert arm.times[i_before] == 59.0 and arm.times[i_after] == 61.0
        # the switch at t = 60 spikes the tracking error
        assert arm.mean_abs_error[i_after] > arm.mean_abs_error[i_before]
    with pytest.raises(DomainError):
        nonstationary_experiment(dataclasses.replace(cfg, schedule=None))
    with pytest.raises(DomainError):
        nonstationary_experiment(dataclasses.replace(cfg, schedule=((0.0, 20.0),)))


def test_c1_sweep_shapes():
    base = ExperimentConfig(
        model=LEARN, policy="learn:full", horizon=100.0, scenarios=6,
        master_seed=717, grid_points=60,
    )
    res = c1_dependency_sweep(
        base, phi_grid=(1e-6, 1e-5), lambda_grid=(0.4,), kbar_grid=(100.0,),
        kappa0_grid=(10.0, 50.0),
    )
    assert res.table_phi_lambda.shape == (2, 3)
    assert res.table_kbar_kappa0.shape == (2, 3)
    assert np.array_equal(res.table_phi_lambda[:, 0], [1e-6, 1e-5])
    assert np.array_equal(res.table_kbar_kappa0[:, 1], [10.0, 50.0])
    assert np.all(np.isfinite(res.table_phi_lambda[:, 2]))
    assert np.all(np.isfinite(res.table_kbar_kappa0[:, 2]))
