"""Constrained smoothing in a reproducing kernel Hilbert space.

The smoother is computed on nested piecewise-linear meshes, where shape
constraints become linear inequalities on node values and the discrete
problem is a strictly convex QP.  The QP solution is also the mode of the
posterior of the node values restricted to the constraint set.
"""

from .bayes import (
    MapReport,
    NodePosterior,
    SampleBatch,
    draw_attempts,
    log_posterior_unnorm,
    map_equals_qp,
    node_posterior,
    rejection_sample,
)
from .constraints import (
    ConstraintSet,
    LinearInequalities,
    LowerBound,
    Monotone,
    Shape,
    UpperBound,
    compile_constraints,
    is_feasible,
    project_check,
)
from .convergence import RefinementReport, projection_gap, run_refinement
from .errors import (
    ContradictionError,
    DomainError,
    FactorizationError,
    InfeasibleError,
    LowAcceptanceError,
    MaxIterationsError,
    MeshMismatchError,
    PreconditionError,
    SizeError,
    SmoothingError,
    SolverError,
)
from .kernel import GramMatrix, Kernel, KernelSpan, build_gram, eval_kernel
from .mesh import HnMetric, Mesh, PiecewiseLinearFn, hn_inner, interpolate, rho_eval
from .solver import (
    DataSet,
    QPProblem,
    Solution,
    brute_oracle,
    build_problem,
    objective_j_on_span,
    objective_jn,
    solve_closed_form,
    solve_constrained,
    solve_unconstrained,
)

__version__ = "0.1.0"

__all__ = [
    "ConstraintSet", "ContradictionError", "DataSet", "DomainError", "FactorizationError",
    "GramMatrix", "HnMetric", "InfeasibleError", "Kernel", "KernelSpan", "LinearInequalities",
    "LowAcceptanceError", "LowerBound", "MapReport", "MaxIterationsError", "Mesh",
    "MeshMismatchError", "Monotone", "NodePosterior", "PiecewiseLinearFn", "PreconditionError",
    "QPProblem", "RefinementReport", "SampleBatch", "Shape", "SizeError", "SmoothingError",
    "Solution", "SolverError", "UpperBound", "brute_oracle", "build_gram", "build_problem",
    "compile_constraints", "draw_attempts", "eval_kernel", "hn_inner", "interpolate",
    "is_feasible", "log_posterior_unnorm", "map_equals_qp", "node_posterior",
    "objective_j_on_span", "objective_jn", "project_check", "projection_gap",
    "rejection_sample", "rho_eval", "run_refinement", "solve_closed_form",
    "solve_constrained", "solve_unconstrained",
]
