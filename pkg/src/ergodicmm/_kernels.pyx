# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twins of the kernels in _kernels_py.

Semantics, argument conventions, and uniform-stream consumption are kept
identical to the pure-Python module; see its docstring.  Operations inside
the event loop mirror the Python reference line for line so both backends
produce the same trajectories from the same generator state.
"""

from libc.math cimport exp, expm1, log, log1p, sqrt, INFINITY, isfinite, fabs

import numpy as np

from .errors import ConvergenceError, PolicyError

DEF BUFFER_SIZE = 4096
DEF BRACKET_DOUBLINGS = 60

cdef double LOG2 = log(2.0)


cdef inline double _log1mexp(double x) nogil:
    if x <= LOG2:
        return log(-expm1(-x))
    return log1p(-exp(-x))


def loglik_packed(double kappa, double[::1] deltas, unsigned char[::1] fills,
                  double[::1] weights):
    cdef Py_ssize_t i, n = deltas.shape[0]
    cdef double total = 0.0, d, x
    for i in range(n):
        d = deltas[i]
        if not isfinite(d):
            continue
        if fills[i]:
            total += weights[i] * (-kappa * d)
        else:
            x = kappa * d
            total += weights[i] * _log1mexp(x)
    return total


cdef void _data_score_curv(double kappa, double[::1] deltas,
                           unsigned char[::1] fills, double[::1] weights,
                           double* score, double* curv) nogil:
    cdef Py_ssize_t i, n = deltas.shape[0]
    cdef double s = 0.0, c = 0.0, d, w, x, en, em
    for i in range(n):
        d = deltas[i]
        if not isfinite(d):
            continue
        w = weights[i]
        if fills[i]:
            s -= w * d
        else:
            x = kappa * d
            en = exp(-x)
            em = expm1(-x)
            s += w * d * en / (-em)
            c -= w * d * d * en / (em * em)
    score[0] = s
    curv[0] = c


cdef void _regularizer_score_curv(double kappa, double delta0,
                                  double* score, double* curv) nogil:
    cdef double x = kappa * delta0
    cdef double en = exp(-x)
    cdef double em = expm1(-x)
    score[0] = -delta0 + delta0 * en / (-em)
    curv[0] = -delta0 * delta0 * en / (em * em)


def regularizer_value(double kappa, double delta0):
    return -kappa * delta0 + _log1mexp(kappa * delta0)


cdef void _score_total(double kappa, double[::1] deltas,
                       unsigned char[::1] fills, double[::1] weights,
                       double delta0, double k_upper,
                       double* score, double* curv) nogil:
    cdef double s1, c1, s2, c2, slope
    if kappa <= k_upper:
        _data_score_curv(kappa, deltas, fills, weights, &s1, &c1)
        _regularizer_score_curv(kappa, delta0, &s2, &c2)
        score[0] = s1 + s2
        curv[0] = c1 + c2
    else:
        _data_score_curv(k_upper, deltas, fills, weights, &s1, &c1)
        _regularizer_score_curv(k_upper, delta0, &s2, &c2)
        slope = c1 + c2
        score[0] = (s1 + s2) + (kappa - k_upper) * slope
        curv[0] = slope


def score_packed(double kappa, double[::1] deltas, unsigned char[::1] fills,
                 double[::1] weights, double delta0, double k_upper):
    cdef double s, c
    _score_total(kappa, deltas, fills, weights, delta0, k_upper, &s, &c)
    return s, c


def solve_kappa_packed(double[::1] deltas, unsigned char[::1] fills,
                       double[::1] weights, double delta0, double k_upper,
                       double kappa0, double tol, int maxit):
    cdef double lo, hi, x, xn, s, c
    cdef int i, it

    _score_total(kappa0, deltas, fills, weights, delta0, k_upper, &s, &c)
    if s == 0.0:
        return kappa0
    if s > 0.0:
        lo = kappa0
        hi = kappa0
        for i in range(BRACKET_DOUBLINGS):
            hi *= 2.0
            _score_total(hi, deltas, fills, weights, delta0, k_upper, &s, &c)
            if s < 0.0:
                break
            lo = hi
        else:
            raise ConvergenceError("failed to bracket the score root from above")
    else:
        hi = kappa0
        lo = kappa0
        for i in range(BRACKET_DOUBLINGS):
            lo *= 0.5
            _score_total(lo, deltas, fills, weights, delta0, k_upper, &s, &c)
            if s > 0.0:
                break
            hi = lo
        else:
            raise ConvergenceError("failed to bracket the score root from below")

    x = 0.5 * (lo + hi)
    for it in range(maxit):
        _score_total(x, deltas, fills, weights, delta0, k_upper, &s, &c)
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
        if fabs(xn - x) <= tol * (1.0 + fabs(xn)):
            return xn
        x = xn
    raise ConvergenceError(f"score root iteration did not converge in {maxit} steps")


cdef inline double _reward_rate(Py_ssize_t qi, double[::1] ask, double[::1] bid,
                                double[::1] qsq, double lam_p, double lam_m,
                                double phi, double kappa_star) nogil:
    cdef double a = ask[qi]
    cdef double b = bid[qi]
    cdef double r = -phi * qsq[qi]
    if a != INFINITY:
        r += lam_p * a * exp(-kappa_star * a)
    if b != INFINITY:
        r += lam_m * b * exp(-kappa_star * b)
    return r


def simulate_static_path(double lam_p, double lam_m, double phi, double horizon,
                         Py_ssize_t q0_index, double[::1] ask, double[::1] bid,
                         double[::1] qsq, double[::1] sched_t, double[::1] sched_k,
                         object rng):
    """See _kernels_py.simulate_static_path; identical contract."""
    cdef double rate = lam_p + lam_m
    cdef double p_buy = lam_p / rate
    cdef Py_ssize_t n_states = ask.shape[0]

    cdef Py_ssize_t cap = <Py_ssize_t>(rate * horizon + 12.0 * sqrt(rate * horizon) + 64.0)
    times_a = np.empty(cap)
    sides_a = np.empty(cap, dtype=np.int8)
    depths_a = np.empty(cap)
    fills_a = np.empty(cap, dtype=np.uint8)
    qidx_a = np.empty(cap, dtype=np.int64)
    cumr_a = np.empty(cap)
    cdef double[::1] times = times_a
    cdef signed char[::1] sides = sides_a
    cdef double[::1] depths = depths_a
    cdef unsigned char[::1] fills = fills_a
    cdef long long[::1] qidx = qidx_a
    cdef double[::1] cumr = cumr_a

    buf_a = rng.random(BUFFER_SIZE)
    cdef double[::1] buf = buf_a
    cdef Py_ssize_t bidx = 0

    cdef double t = 0.0, reward = 0.0
    cdef Py_ssize_t qi = q0_index
    cdef Py_ssize_t m = sched_t.shape[0]
    cdef Py_ssize_t j = 0
    cdef Py_ssize_t count = 0
    cdef double u1, u2, u3, dt, t_next, seg_start, f, depth, kappa_now
    cdef int side
    cdef bint filled

    while True:
        if bidx >= BUFFER_SIZE:
            buf_a = rng.random(BUFFER_SIZE)
            buf = buf_a
            bidx = 0
        u1 = buf[bidx]; bidx += 1
        while u1 == 0.0:
            if bidx >= BUFFER_SIZE:
                buf_a = rng.random(BUFFER_SIZE)
                buf = buf_a
                bidx = 0
            u1 = buf[bidx]; bidx += 1
        dt = -log1p(-u1) / rate
        t_next = t + dt
        if t_next > horizon:
            seg_start = t
            while j + 1 < m and sched_t[j + 1] < horizon:
                f = _reward_rate(qi, ask, bid, qsq, lam_p, lam_m, phi, sched_k[j])
                reward += f * (sched_t[j + 1] - seg_start)
                seg_start = sched_t[j + 1]
                j += 1
            f = _reward_rate(qi, ask, bid, qsq, lam_p, lam_m, phi, sched_k[j])
            reward += f * (horizon - seg_start)
            break

        if bidx >= BUFFER_SIZE:
            buf_a = rng.random(BUFFER_SIZE)
            buf = buf_a
            bidx = 0
        u2 = buf[bidx]; bidx += 1
        side = 0 if u2 < p_buy else 1
        if bidx >= BUFFER_SIZE:
            buf_a = rng.random(BUFFER_SIZE)
            buf = buf_a
            bidx = 0
        u3 = buf[bidx]; bidx += 1

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
        filled = u3 < exp(-kappa_now * depth)
        if filled:
            qi = qi + 1 if side == 0 else qi - 1
            if qi < 0 or qi >= n_states:
                raise PolicyError("inventory left the grid; depth tables are inconsistent")

        if count == cap:
            cap *= 2
            times_a = np.resize(times_a, cap)
            sides_a = np.resize(sides_a, cap)
            depths_a = np.resize(depths_a, cap)
            fills_a = np.resize(fills_a, cap)
            qidx_a = np.resize(qidx_a, cap)
            cumr_a = np.resize(cumr_a, cap)
            times = times_a; sides = sides_a; depths = depths_a
            fills = fills_a; qidx = qidx_a; cumr = cumr_a
        times[count] = t_next
        sides[count] = side
        depths[count] = depth
        fills[count] = 1 if filled else 0
        qidx[count] = qi
        cumr[count] = reward
        count += 1
        t = t_next

    return (
        times_a[:count].copy(),
        sides_a[:count].copy(),
        depths_a[:count].copy(),
        fills_a[:count].copy(),
        qidx_a[:count].copy(),
        cumr_a[:count].copy(),
        reward,
    )
