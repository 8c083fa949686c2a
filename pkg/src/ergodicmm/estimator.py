"""Online maximum-likelihood estimation of the fill decay rate.

Each posted quote at depth d that meets a market order is a Bernoulli
trial with success probability exp(-kappa d).  The log-likelihood of a
record of such trials is concave in kappa but can be degenerate (all
misses push the maximiser to +inf, all fills to 0), so a fixed
regularising pseudo-observation R(kappa) = -kappa delta0 +
log(1 - exp(-kappa delta0)) is always added, and beyond the upper
truncation bound k_upper the objective continues quadratically, which
keeps the score linear there.  Estimates are reported both raw (the root
of the regularised score) and truncated to [k_lower, k_upper].

Three weighting modes are supported for non-stationary environments:
"full" uses every observation, "sliding_window" refits on the trailing
time window, and "ewma" weights observation n by
exp(-ewma_alpha * (t_N - t_n)).  The regulariser is never weighted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import DomainError, OrderingError, StructureError

__all__ = [
    "FillObservation",
    "EstimatorConfig",
    "EstimatorState",
    "ConsistencyResult",
    "OnlineKappaEstimator",
    "truncate",
    "initial_state",
    "log_likelihood",
    "score_regularized",
    "solve_kappa",
    "online_update",
    "consistency_experiment",
]

_MODES = ("full", "sliding_window", "ewma")


@dataclass(frozen=True)
class FillObservation:
    """One quote that met a market order: posted depth and whether it filled."""

    time: float
    depth: float
    filled: bool

    def __post_init__(self) -> None:
        if not math.isfinite(self.time):
            raise DomainError(f"observation time must be finite, got {self.time}")
        if math.isnan(self.depth) or self.depth < 0.0:
            raise DomainError(f"depth must be nonnegative, got {self.depth}")
        if math.isinf(self.depth) and self.filled:
            raise DomainError("a quote at infinite depth cannot fill")


@dataclass(frozen=True)
class EstimatorConfig:
    """Tuning constants for the regularised estimator.

    delta0 is the regulariser depth, [k_lower, k_upper] the truncation
    interval, kappa_init both the pre-data estimate and the root-search
    starting point.  window (a time width) is required in sliding_window
    mode, ewma_alpha (a decay rate per unit time) in ewma mode.
    """

    delta0: float = 0.01
    k_lower: float = 1.0
    k_upper: float = 100.0
    kappa_init: float = 50.0
    mode: str = "full"
    window: float | None = None
    ewma_alpha: float | None = None
    root_tolerance: float = 1e-10
    max_iterations: int = 200

    def __post_init__(self) -> None:
        if not (self.delta0 > 0.0 and math.isfinite(self.delta0)):
            raise DomainError(f"delta0 must be finite and > 0, got {self.delta0}")
        if not (0.0 < self.k_lower < self.k_upper and math.isfinite(self.k_upper)):
            raise DomainError(
                f"need 0 < k_lower < k_upper, got [{self.k_lower}, {self.k_upper}]"
            )
        if not (self.kappa_init > 0.0 and math.isfinite(self.kappa_init)):
            raise DomainError(f"kappa_init must be finite and > 0, got {self.kappa_init}")
        if self.mode not in _MODES:
            raise DomainError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.mode == "sliding_window":
            if self.window is None or not (self.window > 0.0 and math.isfinite(self.window)):
                raise DomainError("sliding_window mode requires a finite window > 0")
        if self.mode == "ewma":
            if self.ewma_alpha is None or not (
                self.ewma_alpha > 0.0 and math.isfinite(self.ewma_alpha)
            ):
                raise DomainError("ewma mode requires a finite ewma_alpha > 0")
        if not (self.root_tolerance > 0.0):
            raise DomainError("root_tolerance must be > 0")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")


@dataclass
class EstimatorState:
    """Observations seen so far with the current raw and truncated estimates."""

    observations: tuple[FillObservation, ...]
    kappa_raw: float
    kappa_hat: float


@dataclass(frozen=True)
class ConsistencyResult:
    """90th-percentile absolute errors over sample sizes, with the log-log slope."""

    sample_sizes: tuple[int, ...]
    p90_errors: tuple[float, ...]
    slope: float


def truncate(kappa: float, config: EstimatorConfig) -> float:
    """Clamp an estimate into [k_lower, k_upper]."""
    return min(max(kappa, config.k_lower), config.k_upper)


def initial_state(config: EstimatorConfig) -> EstimatorState:
    """Pre-data state: the configured starting value, truncated."""
    return EstimatorState(
        observations=(),
        kappa_raw=config.kappa_init,
        kappa_hat=truncate(config.kappa_init, config),
    )


def _pack(
    observations, weights=None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    deltas = np.asarray([o.depth for o in observations], dtype=float)
    fills = np.asarray([o.filled for o in observations], dtype=np.uint8)
    if np.any(np.isnan(deltas)) or np.any(deltas < 0.0):
        raise DomainError("depths must be nonnegative")
    if np.any((deltas == 0.0) & (fills == 0)):
        raise DomainError("a zero-depth quote cannot miss; observation has zero likelihood")
    if weights is None:
        w = np.ones(deltas.shape[0])
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != deltas.shape:
            raise StructureError("weights must match observations in length")
        if np.any(~np.isfinite(w)) or np.any(w < 0.0):
            raise DomainError("weights must be finite and nonnegative")
    return deltas, fills, w


def log_likelihood(kappa: float, observations, weights=None) -> float:
    """Weighted fill/miss log-likelihood; zero for an empty record."""
    if not (kappa > 0.0 and math.isfinite(kappa)):
        raise DomainError(f"kappa must be finite and > 0, got {kappa}")
    deltas, fills, w = _pack(observations, weights)
    if deltas.size == 0:
        return 0.0
    return float(_backend.loglik_packed(kappa, deltas, fills, w))


def score_regularized(
    kappa: float, observations, config: EstimatorConfig, weights=None
) -> float:
    """Derivative of the regularised objective, linear beyond k_upper."""
    if not (kappa > 0.0 and math.isfinite(kappa)):
        raise DomainError(f"kappa must be finite and > 0, got {kappa}")
    deltas, fills, w = _pack(observations, weights)
    s, _ = _backend.score_packed(
        kappa, deltas, fills, w, config.delta0, config.k_upper
    )
    return float(s)


def _solve_packed(deltas, fills, w, config: EstimatorConfig) -> tuple[float, float]:
    raw = float(
        _backend.solve_kappa_packed(
            deltas,
            fills,
            w,
            config.delta0,
            config.k_upper,
            config.kappa_init,
            config.root_tolerance,
            config.max_iterations,
        )
    )
    return raw, truncate(raw, config)


def solve_kappa(observations, config: EstimatorConfig, weights=None) -> tuple[float, float]:
    """Root of the regularised score over the given record.

    Returns (kappa_raw, kappa_hat).  The record may be empty, in which
    case the root is that of the regulariser alone, log(2) / delta0.
    Weighting-mode logic lives in online_update; this function uses the
    observations exactly as passed.
    """
    deltas, fills, w = _pack(observations, weights)
    return _solve_packed(deltas, fills, w, config)


def _mode_solve(
    times: np.ndarray,
    deltas: np.ndarray,
    fills: np.ndarray,
    config: EstimatorConfig,
) -> tuple[float, float]:
    """Apply the configured weighting mode and solve.  times must be sorted."""
    t_last = times[-1]
    if config.mode == "full":
        return _solve_packed(deltas, fills, np.ones(deltas.shape[0]), config)
    if config.mode == "sliding_window":
        start = np.searchsorted(times, t_last - config.window, side="left")
        sel_d = np.ascontiguousarray(deltas[start:])
        sel_f = np.ascontiguousarray(fills[start:])
        return _solve_packed(sel_d, sel_f, np.ones(sel_d.shape[0]), config)
    w = np.exp(-config.ewma_alpha * (t_last - times))
    return _solve_packed(deltas, fills, w, config)


def online_update(
    state: EstimatorState, new_observation: FillObservation, config: EstimatorConfig
) -> EstimatorState:
    """Fold one observation into the state and re-estimate.

    Observation times must be nondecreasing; an earlier timestamp raises
    OrderingError.  In full mode the result matches a batch solve over
    the same record exactly.  This functional form re-packs the whole
    record each call; OnlineKappaEstimator does the same work with
    amortised constant packing cost per event.
    """
    if state.observations and new_observation.time < state.observations[-1].time:
        raise OrderingError(
            f"observation at t={new_observation.time} precedes last seen "
            f"t={state.observations[-1].time}"
        )
    obs = state.observations + (new_observation,)
    times = np.asarray([o.time for o in obs])
    deltas, fills, _ = _pack(obs)
    raw, hat = _mode_solve(times, deltas, fills, config)
    return EstimatorState(observations=obs, kappa_raw=raw, kappa_hat=hat)


class OnlineKappaEstimator:
    """Event-loop adapter around the estimator with preallocated buffers."""

    def __init__(self, config: EstimatorConfig):
        self.config = config
        self._cap = 256
        self._times = np.empty(self._cap)
        self._deltas = np.empty(self._cap)
        self._fills = np.empty(self._cap, dtype=np.uint8)
        self._n = 0
        self.kappa_raw = config.kappa_init
        self.kappa_hat = truncate(config.kappa_init, config)

    @property
    def n_observations(self) -> int:
        return self._n

    def update(self, time: float, depth: float, filled: bool) -> tuple[float, float]:
        if math.isnan(depth) or depth < 0.0:
            raise DomainError(f"depth must be nonnegative, got {depth}")
        if depth == 0.0 and not filled:
            raise DomainError("a zero-depth quote cannot miss")
        if math.isinf(depth) and filled:
            raise DomainError("a quote at infinite depth cannot fill")
        if self._n and time < self._times[self._n - 1]:
            raise OrderingError(
                f"observation at t={time} precedes last seen t={self._times[self._n - 1]}"
            )
        if self._n == self._cap:
            self._cap *= 2
            self._times = np.resize(self._times, self._cap)
            self._deltas = np.resize(self._deltas, self._cap)
            self._fills = np.resize(self._fills, self._cap)
        self._times[self._n] = time
        self._deltas[self._n] = depth
        self._fills[self._n] = 1 if filled else 0
        self._n += 1
        n = self._n
        raw, hat = _mode_solve(
            self._times[:n], self._deltas[:n], self._fills[:n], self.config
        )
        self.kappa_raw = raw
        self.kappa_hat = hat
        return raw, hat

    def to_state(self) -> EstimatorState:
        obs = tuple(
            FillObservation(
                time=float(self._times[i]),
                depth=float(self._deltas[i]),
                filled=bool(self._fills[i]),
            )
            for i in range(self._n)
        )
        return EstimatorState(
            observations=obs, kappa_raw=self.kappa_raw, kappa_hat=self.kappa_hat
        )


def constant_depth_policy(depth: float):
    """Depth policy for consistency experiments: always quote the same depth."""

    def policy(rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, depth)

    return policy


def consistency_experiment(
    kappa_star: float,
    depth_policy=None,
    sample_sizes=(100, 1000, 10000),
    replications: int = 200,
    rng: np.random.Generator | None = None,
    config: EstimatorConfig | None = None,
) -> ConsistencyResult:
    """Recovery error of the truncated estimator versus sample size.

    For each replication, sample_sizes[-1] synthetic quotes are drawn
    from depth_policy and filled with probability exp(-kappa_star depth);
    prefixes of the same draw give the nested sample sizes.  Reported per
    size is the 90th percentile of |kappa_hat - kappa_star| across
    replications, plus the least-squares slope of log error against log
    size (about -1/2 when the estimator converges at the parametric rate).
    """
    if not (kappa_star > 0.0 and math.isfinite(kappa_star)):
        raise DomainError(f"kappa_star must be finite and > 0, got {kappa_star}")
    if replications < 2:
        raise DomainError("replications must be >= 2")
    sizes = tuple(int(n) for n in sample_sizes)
    if len(sizes) < 2 or any(n < 1 for n in sizes) or sorted(sizes) != list(sizes):
        raise DomainError("sample_sizes must be >= 1 and increasing")
    if depth_policy is None:
        depth_policy = constant_depth_policy(1.0 / kappa_star)
    if rng is None:
        rng = np.random.default_rng()
    if config is None:
        config = EstimatorConfig()

    n_max = sizes[-1]
    errors = np.empty((replications, len(sizes)))
    ones = np.ones(n_max)
    for r in range(replications):
        depths = np.asarray(depth_policy(rng, n_max), dtype=float)
        if depths.shape != (n_max,):
            raise StructureError("depth_policy must return one depth per draw")
        if np.any(np.isnan(depths)) or np.any(depths < 0.0):
            raise DomainError("depth_policy produced a negative depth")
        u = rng.random(n_max)
        fills = (u < np.exp(-kappa_star * depths)).astype(np.uint8)
        for j, n in enumerate(sizes):
            raw = _backend.solve_kappa_packed(
                np.ascontiguousarray(depths[:n]),
                np.ascontiguousarray(fills[:n]),
                ones[:n],
                config.delta0,
                config.k_upper,
                config.kappa_init,
                config.root_tolerance,
                config.max_iterations,
            )
            errors[r, j] = abs(truncate(float(raw), config) - kappa_star)

    p90 = np.percentile(errors, 90.0, axis=0)
    X = np.column_stack([np.log(np.asarray(sizes, dtype=float)), np.ones(len(sizes))])
    coef, *_ = np.linalg.lstsq(X, np.log(p90), rcond=None)
    return ConsistencyResult(
        sample_sizes=sizes,
        p90_errors=tuple(float(v) for v in p90),
        slope=float(coef[0]),
    )
