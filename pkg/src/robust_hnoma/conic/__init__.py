"""Dense conic modelling layer and interior-point solver."""

from .program import Affine, ConeBlock, ConicProgram, add_linear, add_rsoc, add_soc, affine_sum
from .solver import (
    DUAL_INFEASIBLE,
    MAX_ITER,
    NUMERICAL_FAILURE,
    OPTIMAL,
    OPTIMAL_INACCURATE,
    PRIMAL_INFEASIBLE,
    SOLVED,
    ConicSolution,
    SolverOptions,
    check_certificate,
    solve,
)

__all__ = [
    "Affine", "ConeBlock", "ConicProgram", "add_linear", "add_rsoc", "add_soc", "affine_sum",
    "ConicSolution", "SolverOptions", "check_certificate", "solve",
    "OPTIMAL", "OPTIMAL_INACCURATE", "SOLVED", "PRIMAL_INFEASIBLE", "DUAL_INFEASIBLE", "MAX_ITER", "NUMERICAL_FAILURE",
]
