"""Closed-form solvers for the average-reward quoting problem on a bounded inventory grid.

A market maker holding integer inventory q in [q_min, q_max] posts an ask depth
and a bid depth; unit-size market orders arrive as Poisson streams with rates
lambda_plus (buy) and lambda_minus (sell) and lift a quote at depth d with
probability exp(-kappa d).  Running inventory is penalised at rate phi q^2.
Everything the package needs about this control problem reduces to linear
algebra on one tridiagonal matrix over the inventory states:

* its dominant eigenvalue gives the optimal long-run reward rate gamma,
* the entrywise log of the dominant eigenvector gives the relative value
  function v_hat and hence the optimal depth tables psi_plus / psi_minus,
* matrix exponentials of it give the finite-horizon value,
* replacing the decay rate used by fills with a possibly different true
  sensitivity kappa_star gives the long-run reward of a misspecified quoter.

States are ordered from q_max down to q_min throughout, so index 0 is the
upper inventory bound.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal, expm

from .errors import (
    ConvergenceError,
    DegenerateGridError,
    DomainError,
    IrreducibilityError,
    StructureError,
)

__all__ = [
    "ModelParams",
    "InventoryGrid",
    "ErgodicSolution",
    "RateMatrix",
    "MisspecifiedSolution",
    "build_matrix_A",
    "dominant_eigenpair",
    "ergodic_constant",
    "solve_ergodic",
    "feedback_controls",
    "finite_horizon_value",
    "transition_rate_matrix",
    "equilibrium_distribution",
    "misspecified_gamma",
    "performance_gap_curve",
]

# Residual tolerances for the two linear-algebra checks, relative to the
# matrix scale.
_EIG_RESIDUAL_TOL = 1e-10
_EQUILIBRIUM_RESIDUAL_TOL = 1e-10

# Condition threshold on the diagonal similarity transform beyond which the
# eigendecomposition route for the finite-horizon value is abandoned in
# favour of stepped scaling-and-squaring.
_SYMMETRIZE_COND_LIMIT = 1e12


@dataclass(frozen=True)
class InventoryGrid:
    """Integer inventory states q_max, q_max-1, ..., q_min."""

    q_max: int
    q_min: int

    def __post_init__(self) -> None:
        if not (self.q_min <= 0 <= self.q_max):
            raise DomainError(
                f"inventory bounds must satisfy q_min <= 0 <= q_max, "
                f"got [{self.q_min}, {self.q_max}]"
            )

    @property
    def n(self) -> int:
        return self.q_max - self.q_min + 1

    @property
    def states(self) -> np.ndarray:
        """Inventory values in row order, descending from q_max."""
        return np.arange(self.q_max, self.q_min - 1, -1, dtype=np.int64)

    def index_of(self, q: int) -> int:
        if not (self.q_min <= q <= self.q_max):
            raise DomainError(f"inventory {q} outside [{self.q_min}, {self.q_max}]")
        return self.q_max - int(q)


@dataclass(frozen=True)
class ModelParams:
    """Market and penalty parameters for the quoting problem.

    Parameters
    ----------
    lambda_plus, lambda_minus : float
        Arrival intensities of buy and sell market orders.  Strictly positive.
    kappa : float
        Fill-probability decay rate per unit depth used by the controller.
    phi : float
        Running inventory penalty coefficient (per unit time, times q^2).
    q_max, q_min : int
        Inventory bounds with q_min <= 0 <= q_max.
    alpha_terminal : float
        Terminal penalty coefficient entering the finite-horizon boundary
        condition exp(-alpha_terminal * kappa * q^2).
    sigma, s0 : float
        Mid-price volatility and initial mid-price.  The mid-price is a
        martingale, so neither value enters any optimisation result; they
        are carried for simulation output only.
    allow_degenerate : bool
        Permit a single-state grid (q_max == q_min == 0).  Off by default
        because a degenerate grid admits no quotes.
    """

    lambda_plus: float
    lambda_minus: float
    kappa: float
    phi: float
    q_max: int
    q_min: int
    alpha_terminal: float = 0.0
    sigma: float = 0.01
    s0: float = 10.0
    allow_degenerate: bool = False

    def __post_init__(self) -> None:
        if not (self.lambda_plus > 0.0 and math.isfinite(self.lambda_plus)):
            raise DomainError(f"lambda_plus must be finite and > 0, got {self.lambda_plus}")
        if not (self.lambda_minus > 0.0 and math.isfinite(self.lambda_minus)):
            raise DomainError(f"lambda_minus must be finite and > 0, got {self.lambda_minus}")
        if not (self.kappa > 0.0 and math.isfinite(self.kappa)):
            raise DomainError(f"kappa must be finite and > 0, got {self.kappa}")
        if not (self.phi >= 0.0 and math.isfinite(self.phi)):
            raise DomainError(f"phi must be finite and >= 0, got {self.phi}")
        if not (self.alpha_terminal >= 0.0 and math.isfinite(self.alpha_terminal)):
            raise DomainError(f"alpha_terminal must be finite and >= 0, got {self.alpha_terminal}")
        if not (self.sigma >= 0.0 and math.isfinite(self.sigma)):
            raise DomainError(f"sigma must be finite and >= 0, got {self.sigma}")
        if not math.isfinite(self.s0):
            raise DomainError(f"s0 must be finite, got {self.s0}")
        # Grid validation, including the q_min <= 0 <= q_max convention.
        grid = InventoryGrid(self.q_max, self.q_min)
        if grid.n == 1 and not self.allow_degenerate:
            raise DegenerateGridError(
                "degenerate grid: q_max == q_min leaves no quoting decision; "
                "set allow_degenerate to proceed"
            )

    @property
    def grid(self) -> InventoryGrid:
        return InventoryGrid(self.q_max, self.q_min)

    @property
    def n(self) -> int:
        return self.grid.n


@dataclass(frozen=True)
class ErgodicSolution:
    """Stationary solution of the quoting problem.

    gamma is the optimal long-run reward per unit time, lambda_max the
    dominant eigenvalue (gamma * kappa), omega_hat the dominant eigenvector
    normalised to max entry 1, v_hat = log(omega_hat) / kappa, and
    psi_plus / psi_minus the ask and bid depth tables over the grid.
    psi_plus is +inf at q_min (a fill there would breach the lower bound)
    and psi_minus is +inf at q_max.
    """

    params: ModelParams
    gamma: float
    lambda_max: float
    omega_hat: np.ndarray
    v_hat: np.ndarray
    psi_plus: np.ndarray
    psi_minus: np.ndarray

    @property
    def states(self) -> np.ndarray:
        return self.params.grid.states


@dataclass(frozen=True)
class RateMatrix:
    """Generator of the inventory chain under fixed depth tables.

    matrix[i, j] is the jump rate from states[i] to states[j]; rows sum to
    zero exactly by construction.
    """

    matrix: np.ndarray
    states: np.ndarray


@dataclass(frozen=True)
class MisspecifiedSolution:
    """Long-run reward of quoting with decay rate kappa while fills follow kappa_star.

    a_tilde is the generator of the resulting inventory chain, b_tilde the
    per-state reward rate vector, equilibrium its stationary law, and
    gamma_cross = equilibrium . b_tilde.
    """

    gamma_cross: float
    a_tilde: np.ndarray
    b_tilde: np.ndarray
    equilibrium: np.ndarray


def build_matrix_A(params: ModelParams) -> np.ndarray:
    """Tridiagonal matrix whose dominant eigenpair solves the quoting problem.

    Row i corresponds to inventory q = q_max - i.  The diagonal carries the
    penalty term -phi * kappa * q^2; the superdiagonal (inventory decreasing
    by one, an ask fill) carries lambda_plus / e and the subdiagonal carries
    lambda_minus / e.
    """
    grid = params.grid
    q = grid.states.astype(float)
    n = grid.n
    A = np.zeros((n, n))
    np.fill_diagonal(A, -params.phi * params.kappa * q * q)
    idx = np.arange(n - 1)
    A[idx, idx + 1] = params.lambda_plus / math.e
    A[idx + 1, idx] = params.lambda_minus / math.e
    return A


def _tridiagonal_parts(A: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Validate exact tridiagonal structure and return (diag, super, sub)."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise StructureError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise StructureError("matrix contains non-finite entries")
    n = A.shape[0]
    d = np.diag(A).copy()
    sup = np.diag(A, 1).copy()
    sub = np.diag(A, -1).copy()
    band = np.diag(d) + np.diag(sup, 1) + np.diag(sub, -1)
    if n > 2 and np.any(A != band):
        raise StructureError("matrix has nonzero entries outside the tridiagonal band")
    return d, sup, sub


def dominant_eigenpair(A: np.ndarray) -> tuple[float, np.ndarray]:
    """Largest eigenvalue of a tridiagonal matrix with positive off-diagonals,
    with its positive eigenvector normalised to max entry 1.

    The matrix is symmetrised by the diagonal similarity D A D^-1 with
    d_{i+1} = d_i sqrt(A[i+1,i] / A[i,i+1]), which preserves the spectrum and
    makes the symmetric tridiagonal eigensolver applicable.  Positivity of
    both off-diagonals guarantees a simple top eigenvalue with a strictly
    positive eigenvector.
    """
    A = np.asarray(A, dtype=float)
    d, sup, sub = _tridiagonal_parts(A)
    n = A.shape[0]
    if n == 1:
        return float(d[0]), np.ones(1)
    if np.any(sup <= 0.0) or np.any(sub <= 0.0):
        raise StructureError("off-diagonal entries must be strictly positive")

    # log-space similarity scale, shifted so the weights stay <= 1
    logd = np.concatenate(([0.0], 0.5 * np.cumsum(np.log(sub) - np.log(sup))))
    logd -= logd.max()
    off = np.sqrt(sup * sub)
    try:
        vals, vecs = eigh_tridiagonal(d, off, select="i", select_range=(n - 1, n - 1))
    except Exception as exc:  # pragma: no cover - LAPACK failure is exotic
        raise ConvergenceError(f"tridiagonal eigensolver failed: {exc}") from exc
    lam = float(vals[0])
    w = vecs[:, 0]
    if w[np.argmax(np.abs(w))] < 0.0:
        w = -w
    omega = np.exp(logd) * w
    if np.any(omega <= 0.0) or not np.all(np.isfinite(omega)):
        raise ConvergenceError("dominant eigenvector is not strictly positive")
    omega = omega / omega.max()

    scale = max(np.abs(A).sum(axis=1).max(), 1e-300)
    residual = np.abs(A @ omega - lam * omega).max()
    if residual > _EIG_RESIDUAL_TOL * scale:
        raise ConvergenceError(
            f"eigenpair residual {residual:.3e} exceeds {_EIG_RESIDUAL_TOL:.0e} * |A|"
        )
    return lam, omega


def _require_nondegenerate(params: ModelParams) -> None:
    if params.n == 1 and not params.allow_degenerate:
        raise DegenerateGridError(
            "degenerate grid: q_max == q_min leaves no quoting decision; "
            "set allow_degenerate to proceed"
        )


def ergodic_constant(params: ModelParams) -> float:
    """Optimal long-run reward per unit time."""
    _require_nondegenerate(params)
    lam, _ = dominant_eigenpair(build_matrix_A(params))
    return lam / params.kappa


def feedback_controls(
    omega_hat: np.ndarray, params: ModelParams
) -> tuple[np.ndarray, np.ndarray]:
    """Depth tables implied by a dominant eigenvector.

    The eigenvector is defined only up to a positive scalar; it is
    canonicalised here by dividing by its max entry before taking logs, so
    any positively rescaled input yields the same tables up to the rounding
    of the input itself.  Ask depths are +inf at q_min and bid depths +inf
    at q_max: those fills would push inventory out of bounds.
    """
    omega = np.asarray(omega_hat, dtype=float)
    n = params.n
    if omega.shape != (n,):
        raise StructureError(f"omega_hat must have shape ({n},), got {omega.shape}")
    if np.any(omega <= 0.0) or not np.all(np.isfinite(omega)):
        raise DomainError("omega_hat must be strictly positive and finite")
    u = omega / omega.max()
    v = np.log(u) / params.kappa
    inv_kappa = 1.0 / params.kappa
    psi_plus = np.full(n, np.inf)
    psi_minus = np.full(n, np.inf)
    if n > 1:
        # index i is inventory q_max - i; an ask fill moves i -> i+1
        psi_plus[:-1] = inv_kappa + v[:-1] - v[1:]
        psi_minus[1:] = inv_kappa + v[1:] - v[:-1]
    return psi_plus, psi_minus


def solve_ergodic(params: ModelParams) -> ErgodicSolution:
    """Full stationary solution: gamma, value function, and depth tables."""
    _require_nondegenerate(params)
    if params.n == 1:
        # single state q = 0: no quotes, no penalty, zero reward
        return ErgodicSolution(
            params=params,
            gamma=0.0,
            lambda_max=0.0,
            omega_hat=np.ones(1),
            v_hat=np.zeros(1),
            psi_plus=np.full(1, np.inf),
            psi_minus=np.full(1, np.inf),
        )
    A = build_matrix_A(params)
    lam, omega = dominant_eigenpair(A)
    v_hat = np.log(omega) / params.kappa
    psi_plus, psi_minus = feedback_controls(omega, params)
    return ErgodicSolution(
        params=params,
        gamma=lam / params.kappa,
        lambda_max=lam,
        omega_hat=omega,
        v_hat=v_hat,
        psi_plus=psi_plus,
        psi_minus=psi_minus,
    )


def finite_horizon_value(t: float, T: float, params: ModelParams) -> np.ndarray:
    """Value function v(t, q) of the horizon-T problem, as a vector over the grid.

    Computed as log of the propagated terminal vector z_q =
    exp(-alpha_terminal * kappa * q^2) under the matrix exponential
    exp((T - t) A), divided by kappa.  The eigendecomposition route is used
    when the symmetrising similarity is well conditioned; otherwise the
    exponential is applied in steps with running renormalisation.
    """
    if not (math.isfinite(t) and math.isfinite(T)):
        raise DomainError("t and T must be finite")
    if t < 0.0 or T < 0.0 or t > T:
        raise DomainError(f"need 0 <= t <= T, got t={t}, T={T}")
    _require_nondegenerate(params)
    grid = params.grid
    q = grid.states.astype(float)
    log_z = -params.alpha_terminal * params.kappa * q * q
    s = T - t
    if s == 0.0:
        return log_z / params.kappa
    if params.n == 1:
        A = build_matrix_A(params)
        return (s * A[0, 0] + log_z) / params.kappa

    A = build_matrix_A(params)
    d, sup, sub = _tridiagonal_parts(A)
    logd = np.concatenate(([0.0], 0.5 * np.cumsum(np.log(sub) - np.log(sup))))
    logd -= logd.max()
    cond = math.exp(-logd.min())
    if cond <= _SYMMETRIZE_COND_LIMIT:
        off = np.sqrt(sup * sub)
        vals, Q = eigh_tridiagonal(d, off)
        y = Q.T @ np.exp(log_z - logd)
        lam_top = vals[-1]
        u = np.exp(logd) * (Q @ (np.exp(s * (vals - lam_top)) * y))
        if np.all(u > 0.0) and np.all(np.isfinite(u)):
            return (s * lam_top + np.log(u)) / params.kappa
        # fall through to the stepped route on sign loss

    return _finite_horizon_stepped(A, log_z, s, params.kappa)


def _finite_horizon_stepped(
    A: np.ndarray, log_z: np.ndarray, s: float, kappa: float
) -> np.ndarray:
    """Stepped matrix-exponential propagation with renormalisation."""
    norm = np.abs(A).sum(axis=1).max()
    nsteps = max(1, math.ceil(s * norm / 0.5))
    E = expm(A * (s / nsteps))
    y = np.exp(log_z)
    log_scale = 0.0
    for _ in range(nsteps):
        y = E @ y
        m = y.max()
        if not (m > 0.0 and math.isfinite(m)):
            raise ConvergenceError("matrix exponential propagation lost positivity")
        y /= m
        log_scale += math.log(m)
    if np.any(y <= 0.0):
        raise ConvergenceError("matrix exponential propagation underflowed")
    return (log_scale + np.log(y)) / kappa


def transition_rate_matrix(
    psi_plus: np.ndarray,
    psi_minus: np.ndarray,
    kappa_star: float,
    params: ModelParams,
) -> RateMatrix:
    """Generator of the inventory chain when quotes at the given depths are
    lifted with probability exp(-kappa_star * depth).

    Depths of +inf contribute rate zero.  Rows sum to zero exactly.
    """
    if not (kappa_star > 0.0 and math.isfinite(kappa_star)):
        raise DomainError(f"kappa_star must be finite and > 0, got {kappa_star}")
    n = params.n
    pp = np.asarray(psi_plus, dtype=float)
    pm = np.asarray(psi_minus, dtype=float)
    if pp.shape != (n,) or pm.shape != (n,):
        raise StructureError(f"depth tables must have shape ({n},)")
    if np.any(np.isnan(pp)) or np.any(np.isnan(pm)):
        raise DomainError("depth tables contain NaN")
    if np.any(pp[np.isfinite(pp)] < 0.0) or np.any(pm[np.isfinite(pm)] < 0.0):
        raise DomainError("depth tables must be nonnegative")

    Q = np.zeros((n, n))
    if n > 1:
        # exp(-inf) == 0.0, so unbounded depths drop out cleanly
        down = params.lambda_plus * np.exp(-kappa_star * pp[:-1])
        up = params.lambda_minus * np.exp(-kappa_star * pm[1:])
        idx = np.arange(n - 1)
        Q[idx, idx + 1] = down
        Q[idx + 1, idx] = up
        rowsum = np.zeros(n)
        rowsum[:-1] += down
        rowsum[1:] += up
        Q[np.arange(n), np.arange(n)] = -rowsum
    return RateMatrix(matrix=Q, states=params.grid.states)


def equilibrium_distribution(rate_matrix: RateMatrix | np.ndarray) -> np.ndarray:
    """Stationary law of a tridiagonal generator, via detailed balance.

    For a birth-death chain the stationary probabilities follow from the
    ratio of adjacent rates, pi_{i+1} / pi_i = Q[i, i+1] / Q[i+1, i].  The
    product is accumulated in log space and the result is checked against
    pi Q = 0.
    """
    M = rate_matrix.matrix if isinstance(rate_matrix, RateMatrix) else rate_matrix
    M = np.asarray(M, dtype=float)
    d, sup, sub = _tridiagonal_parts(M)
    n = M.shape[0]
    scale = max(np.abs(M).max(), 1e-300)
    rowsum = M.sum(axis=1)
    if np.abs(rowsum).max() > 1e-12 * scale:
        raise StructureError("rows of a rate matrix must sum to zero")
    if np.any(sup < 0.0) or np.any(sub < 0.0):
        raise StructureError("off-diagonal rates must be nonnegative")
    if n == 1:
        return np.ones(1)
    if np.any(sup == 0.0) or np.any(sub == 0.0):
        raise IrreducibilityError("zero interior rate: chain is not irreducible")

    log_pi = np.concatenate(([0.0], np.cumsum(np.log(sup) - np.log(sub))))
    log_pi -= log_pi.max()
    pi = np.exp(log_pi)
    pi /= pi.sum()
    residual = np.abs(pi @ M).max()
    if residual > _EQUILIBRIUM_RESIDUAL_TOL * scale:
        raise ConvergenceError(
            f"equilibrium residual {residual:.3e} exceeds tolerance"
        )
    return pi


def _reward_rate_vector(
    psi_plus: np.ndarray,
    psi_minus: np.ndarray,
    kappa_star: float,
    params: ModelParams,
) -> np.ndarray:
    """Expected instantaneous reward per state for fixed depth tables.

    Depth d earns d * exp(-kappa_star d) per arrival; +inf depths earn zero.
    The inventory penalty phi q^2 is subtracted.
    """
    q = params.grid.states.astype(float)
    pp = np.asarray(psi_plus, dtype=float)
    pm = np.asarray(psi_minus, dtype=float)
    fin_p = np.isfinite(pp)
    fin_m = np.isfinite(pm)
    pp_safe = np.where(fin_p, pp, 0.0)
    pm_safe = np.where(fin_m, pm, 0.0)
    ask = params.lambda_plus * pp_safe * np.exp(-kappa_star * pp_safe)
    bid = params.lambda_minus * pm_safe * np.exp(-kappa_star * pm_safe)
    return np.where(fin_p, ask, 0.0) + np.where(fin_m, bid, 0.0) - params.phi * q * q


def misspecified_gamma(
    kappa: float, kappa_star: float, params: ModelParams
) -> MisspecifiedSolution:
    """Long-run reward of the quoter optimal for kappa when fills follow kappa_star."""
    if not (kappa > 0.0 and math.isfinite(kappa)):
        raise DomainError(f"kappa must be finite and > 0, got {kappa}")
    ctrl = dataclasses.replace(params, kappa=kappa)
    sol = solve_ergodic(ctrl)
    rm = transition_rate_matrix(sol.psi_plus, sol.psi_minus, kappa_star, params)
    if params.n == 1:
        pi = np.ones(1)
    else:
        pi = equilibrium_distribution(rm)
    b = _reward_rate_vector(sol.psi_plus, sol.psi_minus, kappa_star, params)
    return MisspecifiedSolution(
        gamma_cross=float(pi @ b),
        a_tilde=rm.matrix,
        b_tilde=b,
        equilibrium=pi,
    )


def performance_gap_curve(
    kappa_grid: np.ndarray, kappa_star: float, params: ModelParams
) -> np.ndarray:
    """Rows (kappa, gamma(kappa_star) - gamma_cross(kappa)) over a grid of
    quoting sensitivities; the gap is zero at kappa == kappa_star and
    positive elsewhere."""
    grid = np.asarray(kappa_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise StructureError("kappa_grid must be a nonempty 1-d array")
    g_star = misspecified_gamma(kappa_star, kappa_star, params).gamma_cross
    out = np.empty((grid.size, 2))
    for i, k in enumerate(grid):
        out[i, 0] = k
        out[i, 1] = g_star - misspecified_gamma(float(k), kappa_star, params).gamma_cross
    return out
