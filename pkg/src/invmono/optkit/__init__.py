"""Dense convex-optimization kernel: LP, QP, simplex projection, grid conjugates."""

from invmono.optkit.convex import grid_conjugate, hull_membership, project_simplex
from invmono.optkit.lp import solve_lp, standard_form
from invmono.optkit.programs import LinearProgram, QuadraticProgram, SolveReport, as_vector
from invmono.optkit.qp import solve_qp

__all__ = [
    "LinearProgram",
    "QuadraticProgram",
    "SolveReport",
    "as_vector",
    "grid_conjugate",
    "hull_membership",
    "project_simplex",
    "solve_lp",
    "solve_qp",
    "standard_form",
]
