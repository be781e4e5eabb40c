"""Mesh-refinement studies of the discrete constrained smoother.

Each level refines the previous mesh by midpoint insertion, solves the
discrete problem and samples the solution on a shared uniform grid.  The
report lists level-to-level sup-norm gaps on that grid and objective values;
no convergence rate is asserted.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .constraints import ConstraintSet, compile_constraints, is_feasible
from .errors import InfeasibleError, SmoothingError
from .kernel import Kernel, KernelSpan
from .mesh import Mesh, hn_inner, interpolate
from .solver import DataSet, build_problem, objective_j_on_span, objective_jn, solve_constrained

__all__ = [
    "DEFAULT_EVAL_GRID",
    "MAX_NODES",
    "LevelRecord",
    "RefinementReport",
    "run_refinement",
    "projection_gap",
]

DEFAULT_EVAL_GRID = 2048
MAX_NODES = 1025


@dataclass
class LevelRecord:
    level: int
    N: int
    coeffs: list
    objective: float
    sup_gap_to_prev: float | None
    node_gap_to_prev: float | None
    j_gap_to_prev: float | None
    wall_time: float
    iterations: int = 0
    reference_objective: float | None = None
    reference_gap: float | None = None


@dataclass
class RefinementReport:
    levels: list
    eval_grid: int
    reference_span_objective: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def sup_gaps(self) -> list:
        return [r.sup_gap_to_prev for r in self.levels if r.sup_gap_to_prev is not None]

    def gap_ratio(self) -> float:
        """Last sup gap over the first one."""
        gaps = self.sup_gaps
        if len(gaps) < 2 or gaps[0] == 0.0:
            return math.nan
        return gaps[-1] / gaps[0]

    def to_dict(self, include_time: bool = True) -> dict:
        levels = []
        for r in self.levels:
            d = asdict(r)
            if not include_time:
                d.pop("wall_time")
            levels.append(d)
        return {
            "eval_grid": self.eval_grid,
            "reference_span_objective": self.reference_span_objective,
            "meta": self.meta,
            "levels": levels,
        }

    def to_json(self, include_time: bool = True) -> str:
        return json.dumps(self.to_dict(include_time), indent=2, default=_json_default)

    def to_csv(self) -> str:
        cols = ["level", "N", "objective", "sup_gap_to_prev", "node_gap_to_prev",
                "j_gap_to_prev", "reference_objective", "reference_gap",
                "iterations", "wall_time"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.levels:
            w.writerow([_cell(getattr(r, c)) for c in cols])
        return buf.getvalue()


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".17g")
    return v


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _check_reference(li, c_ref):
    if not is_feasible(li, c_ref):
        raise InfeasibleError("reference function is not feasible on this mesh")


def run_refinement(k: Kernel, data: DataSet, cs: ConstraintSet | None, max_level: int,
                   eval_grid: int = DEFAULT_EVAL_GRID, reference_g=None,
                   min_level: int = 1, warm_start: bool = True) -> RefinementReport:
    """Solve the discrete problem on levels ``min_level..max_level``.

    ``reference_g`` is an optional feasible function; its interpolant's
    objective and its distance to the discrete solution are recorded per
    level.  When it is a :class:`KernelSpan` its exact objective is recorded
    as well.  With ``warm_start`` each level starts the active-set method
    from the previous solution, which stays feasible on the finer mesh.
    Solver errors are re-raised with the level prepended.
    """
    if max_level < min_level + 1:
        raise ValueError("need at least two levels")
    cs = cs if cs is not None else ConstraintSet()
    grid = np.linspace(0.0, 1.0, int(eval_grid))
    base = Mesh.from_sites(data.xs, 0)
    mesh = base
    for _ in range(min_level):
        mesh = mesh.refine()

    records = []
    prev_vals = prev_fn = prev_obj = None
    for level in range(min_level, max_level + 1):
        if mesh.nodes.size > MAX_NODES:
            raise ValueError(f"level {level} has {mesh.nodes.size} nodes (cap {MAX_NODES})")
        t0 = time.perf_counter()
        try:
            p = build_problem(k, mesh, data, compile_constraints(cs, mesh))
            start = None
            if warm_start and prev_fn is not None:
                start = prev_fn(mesh.nodes)
                if not is_feasible(p.ineq, start):
                    start = None
            sol = solve_constrained(p, start=start)
        except SmoothingError as exc:
            exc.level = level
            if exc.args:
                exc.args = (f"level {level}: {exc.args[0]}",) + exc.args[1:]
            raise
        vals = sol.u_hat(grid)
        ref_obj = ref_gap = None
        if reference_g is not None:
            ref = interpolate(mesh, reference_g)
            _check_reference(p.ineq, ref.coeffs)
            ref_obj = objective_jn(p, ref.coeffs)
            diff = ref.coeffs - sol.coeffs
            ref_gap = math.sqrt(max(hn_inner(p.metric, diff, diff), 0.0))
        elapsed = time.perf_counter() - t0
        if prev_vals is None:
            sup_gap = node_gap = j_gap = None
        else:
            sup_gap = float(np.max(np.abs(vals - prev_vals)))
            coarse = prev_fn.mesh.nodes
            node_gap = float(np.max(np.abs(sol.u_hat(coarse) - prev_fn.coeffs)))
            j_gap = abs(sol.objective - prev_obj)
        records.append(LevelRecord(
            level=level,
            N=mesh.n,
            coeffs=sol.coeffs.tolist(),
            objective=sol.objective,
            sup_gap_to_prev=sup_gap,
            node_gap_to_prev=node_gap,
            j_gap_to_prev=j_gap,
            wall_time=elapsed,
            iterations=sol.iterations,
            reference_objective=ref_obj,
            reference_gap=ref_gap,
        ))
        prev_vals, prev_fn, prev_obj = vals, sol.u_hat, sol.objective
        mesh = mesh.refine()

    span_obj = None
    if isinstance(reference_g, KernelSpan):
        span_obj = objective_j_on_span(k, reference_g.sites, reference_g.alpha, data)
    meta = {"kernel": k.to_config(), "constraints": cs.to_config(),
            "noise_var": data.noise_var, "n_data": data.n}
    return RefinementReport(records, int(eval_grid), span_obj, meta)


def projection_gap(k: Kernel, data: DataSet, cs: ConstraintSet | None, level: int,
                   reference_g) -> float:
    """Discrete-norm distance between the interpolant of ``reference_g`` and the solution."""
    mesh = Mesh.from_sites(data.xs, level)
    p = build_problem(k, mesh, data, cs if cs is not None else ConstraintSet())
    ref = interpolate(mesh, reference_g)
    _check_reference(p.ineq, ref.coeffs)
    sol = solve_constrained(p)
    diff = ref.coeffs - sol.coeffs
    return math.sqrt(max(hn_inner(p.metric, diff, diff), 0.0))
