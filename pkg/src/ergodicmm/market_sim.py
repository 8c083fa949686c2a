"""Event-driven simulation of the quoting process.

Market orders arrive as a merged Poisson stream; each arrival consumes
exactly three uniforms from the generator, in order: interarrival time,
side, and fill draw.  The fill draw is taken even when the posted depth
is infinite so that trajectories under different policies stay coupled
path by path under a common seed.  Inventory can never leave the grid:
whatever a policy posts, the simulator overrides the depth on the side
whose fill would breach a bound with +inf.

The reward integral accumulated along a trajectory is the expected
instantaneous reward of the posted quotes, lambda_plus d_a exp(-k* d_a)
+ lambda_minus d_b exp(-k* d_b) - phi q^2, integrated exactly over the
piecewise-constant path, including mid-interval switches of the true
decay rate when a schedule is supplied.

ModelParams.kappa plays the role of the true decay rate here; policies
that quote from a solved model carry their own controller-side value.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import _backend, hjb_core
from ._kernels_py import UniformStream
from .errors import DomainError, PolicyError, StructureError
from .estimator import EstimatorConfig, OnlineKappaEstimator
from .hjb_core import ModelParams

__all__ = [
    "MarketEvent",
    "RngSpec",
    "TrajectoryRecord",
    "QuotingPolicy",
    "ErgodicPolicy",
    "FixedDepthPolicy",
    "MyopicPolicy",
    "LearnedErgodicPolicy",
    "make_rng",
    "next_arrival",
    "fill_outcome",
    "simulate",
    "empirical_distribution",
]

SIDE_BUY = "buy_mo"
SIDE_SELL = "sell_mo"

# stream purposes for seed derivation
PURPOSE_MARKET = 0
PURPOSE_SYNTHETIC = 1


@dataclass(frozen=True)
class MarketEvent:
    """One market-order arrival as seen by the quoting desk."""

    time: float
    side: str
    posted_depth: float
    filled: bool
    inventory_after: int


@dataclass(frozen=True)
class RngSpec:
    """Seed derivation: one master seed, one branch per (scenario, purpose)."""

    master_seed: int
    scenario: int = 0

    def __post_init__(self) -> None:
        if self.master_seed < 0:
            raise DomainError("master_seed must be nonnegative")
        if self.scenario < 0:
            raise DomainError("scenario index must be nonnegative")


def make_rng(spec: RngSpec, purpose: int = PURPOSE_MARKET) -> np.random.Generator:
    """Independent generator for one (scenario, purpose) branch of a master seed."""
    seq = np.random.SeedSequence(spec.master_seed, spawn_key=(spec.scenario, purpose))
    return np.random.default_rng(seq)


def next_arrival(
    rng: np.random.Generator, lambda_plus: float, lambda_minus: float
) -> tuple[float, str]:
    """Draw the next interarrival time and order side.  Consumes two uniforms."""
    if not (lambda_plus > 0.0 and lambda_minus > 0.0):
        raise DomainError("arrival rates must be strictly positive")
    rate = lambda_plus + lambda_minus
    u1 = rng.random()
    while u1 == 0.0:
        u1 = rng.random()
    dt = -math.log1p(-u1) / rate
    u2 = rng.random()
    side = SIDE_BUY if u2 < lambda_plus / rate else SIDE_SELL
    return dt, side


def fill_outcome(rng: np.random.Generator, depth: float, kappa_star: float) -> bool:
    """Bernoulli fill draw for a quote at the given depth.  Consumes one uniform.

    Depth 0 always fills, +inf never does; the uniform is consumed either
    way.
    """
    if math.isnan(depth) or depth < 0.0:
        raise DomainError(f"depth must be nonnegative, got {depth}")
    if not (kappa_star > 0.0 and math.isfinite(kappa_star)):
        raise DomainError(f"kappa_star must be finite and > 0, got {kappa_star}")
    u3 = rng.random()
    return u3 < math.exp(-kappa_star * depth)


class QuotingPolicy:
    """Base class for quoting policies.

    A policy exposes current ask and bid depths per grid index; the
    simulator applies the out-of-bounds override on top.  Policies that
    quote from an estimate set needs_estimate and receive on_estimate
    after every observation.
    """

    needs_estimate = False

    def reset(self, params: ModelParams, kappa_hat: float | None = None) -> None:
        raise NotImplementedError

    def on_estimate(self, kappa_hat: float) -> None:
        pass

    def depths(self, q_index: int) -> tuple[float, float]:
        """(ask, bid) posted at the given grid index, before the bound override."""
        raise NotImplementedError

    def static_tables(self, params: ModelParams):
        """(ask, bid) arrays over the grid when the policy never changes, else None."""
        return None


class ErgodicPolicy(QuotingPolicy):
    """Quotes the stationary-optimal depth tables for a fixed decay rate.

    kappa is the controller's belief; None means use the true value from
    the model parameters, which gives the oracle policy.
    """

    def __init__(self, kappa: float | None = None):
        if kappa is not None and not (kappa > 0.0 and math.isfinite(kappa)):
            raise DomainError(f"kappa must be finite and > 0, got {kappa}")
        self.kappa = kappa
        self._ask = None
        self._bid = None

    def reset(self, params: ModelParams, kappa_hat: float | None = None) -> None:
        k = self.kappa if self.kappa is not None else params.kappa
        sol = hjb_core.solve_ergodic(dataclasses.replace(params, kappa=k))
        self._ask = sol.psi_plus.copy()
        self._bid = sol.psi_minus.copy()

    def depths(self, q_index: int) -> tuple[float, float]:
        return float(self._ask[q_index]), float(self._bid[q_index])

    def static_tables(self, params: ModelParams):
        self.reset(params)
        return self._ask.copy(), self._bid.copy()


class FixedDepthPolicy(QuotingPolicy):
    """Posts the same depth on both sides at every inventory level."""

    def __init__(self, depth: float):
        if math.isnan(depth) or depth < 0.0:
            raise DomainError(f"depth must be nonnegative, got {depth}")
        self.depth = float(depth)

    def reset(self, params: ModelParams, kappa_hat: float | None = None) -> None:
        pass

    def depths(self, q_index: int) -> tuple[float, float]:
        return self.depth, self.depth

    def static_tables(self, params: ModelParams):
        n = params.n
        return np.full(n, self.depth), np.full(n, self.depth)


class MyopicPolicy(QuotingPolicy):
    """Posts 1 / kappa_hat on both sides, ignoring inventory except at bounds."""

    needs_estimate = True

    def __init__(self):
        self._depth = math.inf

    def reset(self, params: ModelParams, kappa_hat: float | None = None) -> None:
        if kappa_hat is None:
            raise PolicyError("myopic policy requires an estimator")
        self._depth = 1.0 / kappa_hat

    def on_estimate(self, kappa_hat: float) -> None:
        self._depth = 1.0 / kappa_hat

    def depths(self, q_index: int) -> tuple[float, float]:
        return self._depth, self._depth


class LearnedErgodicPolicy(QuotingPolicy):
    """Re-solves the stationary depth tables at every new estimate.

    Successive estimates pinned at the same value (truncation does this
    early on) reuse the cached tables.
    """

    needs_estimate = True

    def __init__(self):
        self._params = None
        self._kappa_cached = None
        self._ask = None
        self._bid = None

    def reset(self, params: ModelParams, kappa_hat: float | None = None) -> None:
        if kappa_hat is None:
            raise PolicyError("learned policy requires an estimator")
        self._params = params
        self._kappa_cached = None
        self.on_estimate(kappa_hat)

    def on_estimate(self, kappa_hat: float) -> None:
        if kappa_hat == self._kappa_cached:
            return
        sol = hjb_core.solve_ergodic(
            dataclasses.replace(self._params, kappa=kappa_hat)
        )
        self._ask = sol.psi_plus
        self._bid = sol.psi_minus
        self._kappa_cached = kappa_hat

    def depths(self, q_index: int) -> tuple[float, float]:
        return float(self._ask[q_index]), float(self._bid[q_index])


def _validate_schedule(schedule, params: ModelParams):
    """Normalise a [(start_time, kappa_star)] schedule to a pair of arrays."""
    if schedule is None:
        return np.zeros(1), np.asarray([params.kappa])
    pairs = list(schedule)
    if not pairs:
        raise StructureError("schedule must contain at least one entry")
    t = np.asarray([p[0] for p in pairs], dtype=float)
    k = np.asarray([p[1] for p in pairs], dtype=float)
    if t[0] != 0.0:
        raise DomainError("schedule must start at time 0")
    if np.any(np.diff(t) <= 0.0):
        raise DomainError("schedule start times must be strictly increasing")
    if np.any(~np.isfinite(k)) or np.any(k <= 0.0):
        raise DomainError("scheduled decay rates must be finite and > 0")
    return t, k


def _schedule_index(sched_t: np.ndarray, t: float) -> int:
    """Index of the schedule segment covering time t (right-continuous)."""
    return int(np.searchsorted(sched_t, t, side="right")) - 1


def _segment_reward(
    ask: float,
    bid: float,
    q: float,
    lam_p: float,
    lam_m: float,
    phi: float,
    t0: float,
    t1: float,
    sched_t: np.ndarray,
    sched_k: np.ndarray,
    j: int,
) -> tuple[float, int]:
    """Integral of the reward rate over [t0, t1] for fixed quotes and inventory.

    j indexes the schedule segment containing t0; the updated index is
    returned with the integral.
    """
    total = 0.0
    m = sched_t.shape[0]
    seg_start = t0
    while j + 1 < m and sched_t[j + 1] < t1:
        total += _reward_rate_scalar(ask, bid, q, lam_p, lam_m, phi, sched_k[j]) * (
            sched_t[j + 1] - seg_start
        )
        seg_start = sched_t[j + 1]
        j += 1
    total += _reward_rate_scalar(ask, bid, q, lam_p, lam_m, phi, sched_k[j]) * (
        t1 - seg_start
    )
    return total, j


def _reward_rate_scalar(
    ask: float,
    bid: float,
    q: float,
    lam_p: float,
    lam_m: float,
    phi: float,
    kappa_star: float,
) -> float:
    r = -phi * q * q
    if ask != math.inf:
        r += lam_p * ask * math.exp(-kappa_star * ask)
    if bid != math.inf:
        r += lam_m * bid * math.exp(-kappa_star * bid)
    return r


@dataclass
class TrajectoryRecord:
    """Full record of one simulated path.

    Event arrays are aligned: times[i], sides[i] (0 buy, 1 sell),
    depths[i] (the posted depth on the arriving side), fills[i],
    inventory[i] (after the event), cum_reward[i] (reward integral up to
    times[i]).  seg_ask and seg_bid hold the quotes in effect after each
    event, init_ask and init_bid those in effect from time 0.  kappa_raw
    and kappa_hat trace the estimator when one was attached, else None.
    """

    params: ModelParams
    horizon: float
    q0: int
    schedule_times: np.ndarray
    schedule_kappas: np.ndarray
    times: np.ndarray
    sides: np.ndarray
    depths: np.ndarray
    fills: np.ndarray
    inventory: np.ndarray
    cum_reward: np.ndarray
    seg_ask: np.ndarray
    seg_bid: np.ndarray
    init_ask: float
    init_bid: float
    init_kappa_hat: float | None
    kappa_raw: np.ndarray | None
    kappa_hat: np.ndarray | None
    reward_integral: float

    @property
    def events(self) -> list[MarketEvent]:
        side_names = (SIDE_BUY, SIDE_SELL)
        return [
            MarketEvent(
                time=float(self.times[i]),
                side=side_names[int(self.sides[i])],
                posted_depth=float(self.depths[i]),
                filled=bool(self.fills[i]),
                inventory_after=int(self.inventory[i]),
            )
            for i in range(self.times.shape[0])
        ]

    def _check_time(self, t: float) -> None:
        if not (0.0 <= t <= self.horizon):
            raise DomainError(f"t={t} outside [0, {self.horizon}]")

    def inventory_at(self, t: float) -> int:
        self._check_time(t)
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.q0 if i < 0 else int(self.inventory[i])

    def kappa_hat_at(self, t: float) -> float:
        if self.kappa_hat is None:
            raise DomainError("trajectory carries no estimator trace")
        self._check_time(t)
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.init_kappa_hat if i < 0 else float(self.kappa_hat[i])

    def reward_at(self, t: float) -> float:
        """Reward integral up to time t, exact on the piecewise-constant path."""
        self._check_time(t)
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        if i < 0:
            base, t0, q = 0.0, 0.0, float(self.q0)
            ask, bid = self.init_ask, self.init_bid
        else:
            base, t0, q = float(self.cum_reward[i]), float(self.times[i]), float(self.inventory[i])
            ask, bid = float(self.seg_ask[i]), float(self.seg_bid[i])
        j = _schedule_index(self.schedule_times, t0)
        extra, _ = _segment_reward(
            ask,
            bid,
            q,
            self.params.lambda_plus,
            self.params.lambda_minus,
            self.params.phi,
            t0,
            t,
            self.schedule_times,
            self.schedule_kappas,
            j,
        )
        return base + extra


def _resolve_rng(rng) -> np.random.Generator:
    if isinstance(rng, RngSpec):
        return make_rng(rng, PURPOSE_MARKET)
    if isinstance(rng, np.random.Generator):
        return rng
    raise DomainError("rng must be an RngSpec or a numpy Generator")


def _resolve_estimator(estimator):
    if estimator is None:
        return None
    if isinstance(estimator, OnlineKappaEstimator):
        return estimator
    if isinstance(estimator, EstimatorConfig):
        return OnlineKappaEstimator(estimator)
    raise DomainError("estimator must be an EstimatorConfig or OnlineKappaEstimator")


def simulate(
    params: ModelParams,
    policy: QuotingPolicy,
    horizon: float,
    rng,
    estimator=None,
    q0: int = 0,
    schedule=None,
) -> TrajectoryRecord:
    """Simulate one trajectory of the controlled quoting process.

    params.kappa is the true decay rate governing fills (overridden in
    time by the schedule when one is given).  The policy quotes, the
    optional estimator observes every arrival and feeds policies that
    learn.  rng is an RngSpec (preferred, reproducible by construction)
    or a bare Generator.
    """
    if not (horizon > 0.0 and math.isfinite(horizon)):
        raise DomainError(f"horizon must be finite and > 0, got {horizon}")
    grid = params.grid
    q0_index = grid.index_of(q0)
    sched_t, sched_k = _validate_schedule(schedule, params)
    if sched_t.shape[0] > 1 and sched_t[-1] >= horizon:
        raise DomainError("schedule entries at or beyond the horizon are unreachable")
    gen = _resolve_rng(rng)
    est = _resolve_estimator(estimator)
    if policy.needs_estimate and est is None:
        raise PolicyError(f"{type(policy).__name__} requires an estimator")

    if est is None:
        tables = policy.static_tables(params)
        if tables is not None:
            return _simulate_static(
                params, tables, horizon, q0, q0_index, sched_t, sched_k, gen
            )
    return _simulate_generic(
        params, policy, horizon, q0, q0_index, sched_t, sched_k, gen, est
    )


def _apply_bound_override(ask, bid, q_index: int, n: int) -> tuple[float, float]:
    a = ask if q_index < n - 1 else math.inf
    b = bid if q_index > 0 else math.inf
    return a, b


def _simulate_static(
    params, tables, horizon, q0, q0_index, sched_t, sched_k, gen
) -> TrajectoryRecord:
    ask, bid = tables
    ask = np.ascontiguousarray(ask, dtype=float)
    bid = np.ascontiguousarray(bid, dtype=float)
    n = params.n
    if ask.shape != (n,) or bid.shape != (n,):
        raise PolicyError(f"depth tables must have shape ({n},)")
    if np.any(np.isnan(ask)) or np.any(np.isnan(bid)):
        raise PolicyError("depth tables contain NaN")
    if np.any(ask[np.isfinite(ask)] < 0.0) or np.any(bid[np.isfinite(bid)] < 0.0):
        raise PolicyError("policy posted a negative depth")
    # out-of-bounds override
    ask = ask.copy()
    bid = bid.copy()
    ask[n - 1] = math.inf
    bid[0] = math.inf
    states = params.grid.states
    qsq = (states.astype(float)) ** 2

    times, sides, depths, fills, qidx, cumr, reward = _backend.simulate_static_path(
        params.lambda_plus,
        params.lambda_minus,
        params.phi,
        horizon,
        q0_index,
        ask,
        bid,
        qsq,
        np.ascontiguousarray(sched_t),
        np.ascontiguousarray(sched_k),
        gen,
    )
    inv = states[qidx]
    return TrajectoryRecord(
        params=params,
        horizon=horizon,
        q0=q0,
        schedule_times=sched_t,
        schedule_kappas=sched_k,
        times=times,
        sides=sides,
        depths=depths,
        fills=fills,
        inventory=inv,
        cum_reward=cumr,
        seg_ask=ask[qidx],
        seg_bid=bid[qidx],
        init_ask=float(ask[q0_index]),
        init_bid=float(bid[q0_index]),
        init_kappa_hat=None,
        kappa_raw=None,
        kappa_hat=None,
        reward_integral=float(reward),
    )


def _simulate_generic(
    params, policy, horizon, q0, q0_index, sched_t, sched_k, gen, est
) -> TrajectoryRecord:
    n = params.n
    states = params.grid.states
    lam_p, lam_m, phi = params.lambda_plus, params.lambda_minus, params.phi
    rate = lam_p + lam_m
    p_buy = lam_p / rate
    stream = UniformStream(gen)

    policy.reset(params, est.kappa_hat if est is not None else None)
    init_kappa_hat = est.kappa_hat if est is not None else None

    def current_depths(qi: int) -> tuple[float, float]:
        a, b = policy.depths(qi)
        if math.isnan(a) or math.isnan(b) or a < 0.0 or b < 0.0:
            raise PolicyError(f"policy posted an invalid depth pair ({a}, {b})")
        return _apply_bound_override(a, b, qi, n)

    times: list[float] = []
    sides: list[int] = []
    depths: list[float] = []
    fills: list[int] = []
    qpath: list[int] = []
    cumr: list[float] = []
    seg_ask: list[float] = []
    seg_bid: list[float] = []
    kraw: list[float] = []
    khat: list[float] = []

    t = 0.0
    qi = q0_index
    reward = 0.0
    j = 0
    ask_cur, bid_cur = current_depths(qi)
    init_ask, init_bid = ask_cur, bid_cur

    while True:
        u1 = stream.next()
        while u1 == 0.0:
            u1 = stream.next()
        dt = -math.log1p(-u1) / rate
        t_next = t + dt
        if t_next > horizon:
            extra, j = _segment_reward(
                ask_cur, bid_cur, float(states[qi]), lam_p, lam_m, phi,
                t, horizon, sched_t, sched_k, j,
            )
            reward += extra
            break
        u2 = stream.next()
        side = 0 if u2 < p_buy else 1
        u3 = stream.next()

        extra, j = _segment_reward(
            ask_cur, bid_cur, float(states[qi]), lam_p, lam_m, phi,
            t, t_next, sched_t, sched_k, j,
        )
        reward += extra
        kappa_now = sched_k[j]
        depth = ask_cur if side == 0 else bid_cur
        filled = u3 < math.exp(-kappa_now * depth)
        if filled:
            qi = qi + 1 if side == 0 else qi - 1

        if est is not None:
            raw, hat = est.update(t_next, depth, filled)
            policy.on_estimate(hat)
            kraw.append(raw)
            khat.append(hat)
        ask_cur, bid_cur = current_depths(qi)

        times.append(t_next)
        sides.append(side)
        depths.append(depth)
        fills.append(1 if filled else 0)
        qpath.append(qi)
        cumr.append(reward)
        seg_ask.append(ask_cur)
        seg_bid.append(bid_cur)
        t = t_next

    qidx = np.asarray(qpath, dtype=np.int64)
    return TrajectoryRecord(
        params=params,
        horizon=horizon,
        q0=q0,
        schedule_times=sched_t,
        schedule_kappas=sched_k,
        times=np.asarray(times),
        sides=np.asarray(sides, dtype=np.int8),
        depths=np.asarray(depths),
        fills=np.asarray(fills, dtype=np.uint8),
        inventory=states[qidx] if qidx.size else np.empty(0, dtype=np.int64),
        cum_reward=np.asarray(cumr),
        seg_ask=np.asarray(seg_ask),
        seg_bid=np.asarray(seg_bid),
        init_ask=init_ask,
        init_bid=init_bid,
        init_kappa_hat=init_kappa_hat,
        kappa_raw=np.asarray(kraw) if est is not None else None,
        kappa_hat=np.asarray(khat) if est is not None else None,
        reward_integral=float(reward),
    )


def empirical_distribution(trajectories, t: float) -> np.ndarray:
    """Frequency of each inventory state at time t across trajectories.

    Aligned with the grid of the trajectories' shared parameters.
    """
    trajs = list(trajectories)
    if not trajs:
        raise DomainError("empirical_distribution needs at least one trajectory")
    grid = trajs[0].params.grid
    counts = np.zeros(grid.n)
    for tr in trajs:
        if t > tr.horizon:
            raise DomainError(f"t={t} exceeds a trajectory horizon {tr.horizon}")
        counts[grid.index_of(tr.inventory_at(t))] += 1.0
    return counts / counts.sum()
