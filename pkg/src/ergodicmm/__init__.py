"""Ergodic quoting control on a bounded inventory grid.

Subpackages solve the average-reward control problem in closed form
(hjb_core), simulate the controlled order flow event by event (market_sim),
estimate the fill-sensitivity parameter online (estimator), and run the
regret and convergence experiments (regret_lab).  The cli module exposes
all of it as the `ergodicmm` command.
"""

from . import errors
from ._backend import BACKEND
from .errors import (
    ConfigError,
    ConvergenceError,
    DegenerateGridError,
    DomainError,
    ErgodicMMError,
    IrreducibilityError,
    OrderingError,
    PolicyError,
    StructureError,
)
from .hjb_core import (
    ErgodicSolution,
    InventoryGrid,
    MisspecifiedSolution,
    ModelParams,
    RateMatrix,
    build_matrix_A,
    dominant_eigenpair,
    equilibrium_distribution,
    ergodic_constant,
    feedback_controls,
    finite_horizon_value,
    misspecified_gamma,
    performance_gap_curve,
    solve_ergodic,
    transition_rate_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "ConvergenceError",
    "DegenerateGridError",
    "DomainError",
    "ErgodicMMError",
    "ErgodicSolution",
    "InventoryGrid",
    "IrreducibilityError",
    "MisspecifiedSolution",
    "ModelParams",
    "OrderingError",
    "PolicyError",
    "RateMatrix",
    "StructureError",
    "build_matrix_A",
    "dominant_eigenpair",
    "equilibrium_distribution",
    "ergodic_constant",
    "errors",
    "feedback_controls",
    "finite_horizon_value",
    "misspecified_gamma",
    "performance_gap_curve",
    "solve_ergodic",
    "transition_rate_matrix",
    "__version__",
]
