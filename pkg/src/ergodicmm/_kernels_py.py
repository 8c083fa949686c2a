"""Pure-Python implementations of the hot numerical kernels.

This module is the fallback used when the compiled extension is not
available, and the behavioural reference the extension is benchmarked
against.  The likelihood and score functions are vectorised with numpy;
the event-loop simulator is a plain Python loop written operation for
operation like its compiled twin so that both backends consume the
uniform stream identically.

Conventions shared by both backends:

* observation arrays are (deltas, fills, weights) with float64 depths,
  uint8 fill flags, and float64 weights; infinite depths carry no
  likelihood information and are skipped,
* the regularised score is the data score plus the derivative of
  R(kappa) = -kappa d0 + log(1 - exp(-kappa d0)), and beyond k_upper the
  score continues linearly with the slope it has at k_upper,
* the simulator consumes exactly three uniforms per arrival (interarrival
  time, side, fill draw) from a block-buffered stream refilled 4096
  doubles at a time.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConvergenceError, PolicyError

_BUFFER_SIZE = 4096
_BRACKET_DOUBLINGS = 60


def _log1mexp(x: float) -> float:
    """log(1 - exp(-x)) for x > 0, accurate across the whole range."""
    if x <= math.log(2.0):
        return math.log(-math.expm1(-x))
    return math.log1p(-math.exp(-x))


def loglik_packed(
    kappa: float,
    deltas: np.ndarray,
    fills: np.ndarray,
    weights: np.ndarray,
) -> float:
    """Weighted log-likelihood of fill outcomes at the given decay rate."""
    fin = np.isfinite(deltas)
    d = deltas[fin]
    f = fills[fin].astype(bool)
    w = weights[fin]
    total = -kappa * float(np.sum(w[f] * d[f]))
    x = kappa * d[~f]
    if x.size:
        small = x <= math.log(2.0)
        t = np.empty_like(x)
        t[small] = np.log(-np.expm1(-x[small]))
        t[~small] = np.log1p(-np.exp(-x[~small]))
        total += float(np.sum(w[~f] * t))
    return total


def _data_score_curv(
    kappa: float,
    deltas: np.ndarray,
    fills: np.ndarray,
    weights: np.ndarray,
) -> tuple[float, float]:
    fin = np.isfinite(deltas)
    d = deltas[fin]
    f = fills[fin].astype(bool)
    w = weights[fin]
    score = -float(np.sum(w[f] * d[f]))
    dn = d[~f]
    wn = w[~f]
    if dn.size:
        x = kappa * dn
        en = np.exp(-x)
        em = np.expm1(-x)
        score += float(np.sum(wn * dn * en / (-em)))
        curv = -float(np.sum(wn * dn * dn * en / (em * em)))
    else:
        curv = 0.0
    return score, curv


def _regularizer_score_curv(kappa: float, delta0: float) -> tuple[float, float]:
    x = kappa * delta0
    en = math.exp(-x)
    em = math.expm1(-x)
    score = -delta0 + delta0 * en / (-em)
    curv = -delta0 * delta0 * en / (em * em)
    return score, curv


def regularizer_value(kappa: float, delta0: float) -> float:
    return -kappa * delta0 + _log1mexp(kappa * delta0)


def score_packed(
    kappa: float,
    deltas: np.ndarray,
    fills: np.ndarray,
    weights: np.ndarray,
    delta0: float,
    k_upper: float,
) -> tuple[float, float]:
    """Regularised score and its derivative, linear beyond k_upper."""
    if kappa <= k_upper:
        s1, c1 = _data_score_curv(kappa, deltas, fills, weights)
        s2, c2 = _regularizer_score_curv(kappa, delta0)
        return s1 + s2, c1 + c2
    s1, c1 = _data_score_curv(k_upper, deltas, fills, weights)
    s2, c2 = _regularizer_score_curv(k_upper, delta0)
    slope = c1 + c2
    return (s1 + s2) + (kappa - k_upper) * slope, slope


def solve_kappa_packed(
    deltas: np.ndarray,
    fills: np.ndarray,
    weights: np.ndarray,
    delta0: float,
    k_upper: float,
    kappa0: float,
    tol: float,
    maxit: int,
) -> float:
    """Unique root of the regularised score, by safeguarded Newton.

    The regulariser drives the score to +inf as kappa -> 0 and the total
    score is strictly decreasing, so the root exists and is unique even
    when every observation is a fill.
    """
    def sc(k: float) -> tuple[float, float]:
        return score_packed(k, deltas, fills, weights, delta0, k_upper)

    s0, _ = sc(kappa0)
    if s0 == 0.0:
        return kappa0
    if s0 > 0.0:
        lo = kappa0
        hi = kappa0
        for _ in range(_BRACKET_DOUBLINGS):
            hi *= 2.0
            s, _ = sc(hi)
            if s < 0.0:
                break
            lo = hi
        else:
            raise ConvergenceError("failed to bracket the score root from above")
    else:
        hi = kappa0
        lo = kappa0
        for _ in range(_BRACKET_DOUBLINGS):
            lo *= 0.5
            s, _ = sc(lo)
            if s > 0.0:
                break
            hi = lo
        else:
            raise ConvergenceError("failed to bracket the score root from below")

    x = 0.5 * (lo + hi)
    for _ in range(maxit):
        s, c = sc(x)
        if s > 0.0:
            lo = x
        elif s < 0.0:
            hi = x
        else:
            return x
        if c < 0.0:
            xn = x - s / c
            if not (lo < xn < hi):
                xn = 0.5 * (lo + hi)
        else:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= tol * (1.0 + abs(xn)):
            return xn
        x = xn
    raise ConvergenceError(
        f"score root iteration did not converge in {maxit} steps"
    )


class UniformStream:
    """Block-buffered uniform draws with a deterministic consumption order."""

    __slots__ = ("_rng", "_buf", "_idx")

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._buf = None
        self._idx = 0

    def next(self) -> float:
        if self._buf is None or self._idx >= _BUFFER_SIZE:
            self._buf = self._rng.random(_BUFFER_SIZE)
            self._idx = 0
        u = self._buf[self._idx]
        self._idx += 1
        return float(u)


def _reward_rate(
    qi: int,
    ask: np.ndarray,
    bid: np.ndarray,
    qsq: np.ndarray,
    lam_p: float,
    lam_m: float,
    phi: float,
    kappa_star: float,
) -> float:
    a = ask[qi]
    b = bid[qi]
    r = -phi * qsq[qi]
    if a != math.inf:
        r += lam_p * a * math.exp(-kappa_star * a)
    if b != math.inf:
        r += lam_m * b * math.exp(-kappa_star * b)
    return r


def simulate_static_path(
    lam_p: float,
    lam_m: float,
    phi: float,
    horizon: float,
    q0_index: int,
    ask: np.ndarray,
    bid: np.ndarray,
    qsq: np.ndarray,
    sched_t: np.ndarray,
    sched_k: np.ndarray,
    rng: np.random.Generator,
):
    """Event loop for a fixed pair of depth tables.

    Returns (times, sides, depths, fills, q_indices, cum_reward,
    final_reward) where sides is 0 for a buy market order (ask side) and 1
    for a sell market order, and cum_reward[i] is the expected-reward
    integral up to the i-th event time.  The true decay rate follows the
    right-continuous step schedule (sched_t, sched_k) with sched_t[0] == 0.
    """
    stream = UniformStream(rng)
    rate = lam_p + lam_m
    p_buy = lam_p / rate
    n_states = ask.shape[0]

    cap = int(rate * horizon + 12.0 * math.sqrt(rate * horizon) + 64.0)
    times = np.empty(cap)
    sides = np.empty(cap, dtype=np.int8)
    depths = np.empty(cap)
    fills = np.empty(cap, dtype=np.uint8)
    qidx = np.empty(cap, dtype=np.int64)
    cumr = np.empty(cap)

    t = 0.0
    qi = q0_index
    reward = 0.0
    m = sched_t.shape[0]
    j = 0  # current schedule segment
    count = 0

    while True:
        u1 = stream.next()
        while u1 == 0.0:
            u1 = stream.next()
        dt = -math.log1p(-u1) / rate
        t_next = t + dt
        if t_next > horizon:
            # close the reward integral over the remaining stub
            seg_start = t
            while j + 1 < m and sched_t[j + 1] < horizon:
                f = _reward_rate(qi, ask, bid, qsq, lam_p, lam_m, phi, sched_k[j])
                reward += f * (sched_t[j + 1] - seg_start)
                seg_start = sched_t[j + 1]
                j += 1
            f = _reward_rate(qi, ask, bid, qsq, lam_p, lam_m, phi, sched_k[j])
            reward += f * (horizon - seg_start)
            break

        u2 = stream.next()
        side = 0 if u2 < p_buy else 1
        u3 = stream.next()

        seg_start = t
        while j + 1 < m and sched_t[j + 1] < t_next:
            f = _reward_rate(qi, ask, bid, qsq, lam_p, lam_m, phi, sched_k[j])
            reward += f * (sched_t[j + 1] - seg_start)
            seg_start = sched_t[j + 1]
            j += 1
        f = _reward_rate(qi, ask, bid, qsq, lam_p, lam_m, phi, sched_k[j])
        reward += f * (t_next - seg_start)

        kappa_now = sched_k[j]
        depth = ask[qi] if side == 0 else bid[qi]
        filled = u3 < math.exp(-kappa_now * depth)
        if filled:
            qi = qi + 1 if side == 0 else qi - 1
            if qi < 0 or qi >= n_states:
                raise PolicyError("inventory left the grid; depth tables are inconsistent")

        if count == cap:
            cap *= 2
            times = np.resize(times, cap)
            sides = np.resize(sides, cap)
            depths = np.resize(depths, cap)
            fills = np.resize(fills, cap)
            qidx = np.resize(qidx, cap)
            cumr = np.resize(cumr, cap)
        times[count] = t_next
        sides[count] = side
        depths[count] = depth
        fills[count] = 1 if filled else 0
        qidx[count] = qi
        cumr[count] = reward
        count += 1
        t = t_next

    return (
        times[:count].copy(),
        sides[:count].copy(),
        depths[:count].copy(),
        fills[:count].copy(),
        qidx[:count].copy(),
        cumr[:count].copy(),
        reward,
    )
