"""Objectives, closed-form smoother and the constrained QP on hat coefficients.

The discrete objective is

    J_N(c) = c^T Gamma^{-1} c + ||S c - y||^2 / sigma^2,

with ``S`` selecting the nodes that carry data.  Completing the square gives
``J_N(c) = (c - mu)^T Sigma^{-1} (c - mu) + const`` where ``mu`` and
``Sigma`` are the mean and covariance of the node values conditioned on the
data.  Both are computable from ``Gamma`` by Gaussian conditioning without
ever inverting ``Gamma``, so the active-set iteration works in that metric:
each equality-constrained subproblem is a range-space solve with
``G_W Sigma G_W^T``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

from .constraints import (
    FEAS_TOL,
    ConstraintSet,
    LinearInequalities,
    compile_constraints,
    least_distance_point,
    project_euclidean,
)
from .errors import (
    DomainError,
    InfeasibleError,
    MaxIterationsError,
    PreconditionError,
    SizeError,
    SolverError,
)
from .kernel import Kernel, gram_solve
from .mesh import HnMetric, Mesh, PiecewiseLinearFn, hn_inner

__all__ = [
    "STATIONARITY_TOL",
    "PRIMAL_TOL",
    "COMPLEMENTARITY_TOL",
    "MULTIPLIER_TOL",
    "DataSet",
    "QPProblem",
    "KKTResiduals",
    "Solution",
    "build_problem",
    "node_moments",
    "objective_jn",
    "objective_j_on_span",
    "solve_closed_form",
    "solve_unconstrained",
    "solve_constrained",
    "check_feasible",
    "kkt_residuals",
    "brute_oracle",
]

STATIONARITY_TOL = 1e-8
PRIMAL_TOL = 1e-9
COMPLEMENTARITY_TOL = 1e-9
MULTIPLIER_TOL = 1e-10
BRUTE_MAX_ROWS = 12


@dataclass(frozen=True, eq=False)
class DataSet:
    """Observations ``(x_i, y_i)`` with known noise variance ``sigma^2 > 0``."""

    xs: np.ndarray
    ys: np.ndarray
    noise_var: float = 1.0

    def __post_init__(self):
        xs = np.array(self.xs, dtype=float).ravel()
        ys = np.array(self.ys, dtype=float).ravel()
        if xs.size == 0:
            raise ValueError("data set needs at least one observation")
        if xs.shape != ys.shape:
            raise ValueError("xs and ys must have the same length")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ValueError("data must be finite")
        if xs.min() < 0.0 or xs.max() > 1.0:
            raise DomainError("data sites must lie in [0, 1]")
        sigma2 = float(self.noise_var)
        if not (np.isfinite(sigma2) and sigma2 > 0):
            raise ValueError(f"noise_var must be positive, got {self.noise_var}")
        xs.setflags(write=False)
        ys.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "noise_var", sigma2)

    @property
    def n(self) -> int:
        return self.xs.size


@dataclass(frozen=True, eq=False)
class QPProblem:
    """The discretized smoothing problem on one mesh."""

    metric: HnMetric
    selector: np.ndarray
    data: DataSet
    ineq: LinearInequalities
    site_index: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        S = np.asarray(self.selector, dtype=float)
        if S.shape != (self.data.n, self.metric.mesh.nodes.size):
            raise ValueError("selector must be n x (N+1)")
        if not np.all(S.sum(axis=1) == 1.0):
            raise ValueError("each selector row must contain exactly one 1")
        if self.ineq.dim != S.shape[1]:
            raise ValueError("inequalities do not match the mesh size")
        if self.site_index is None:
            object.__setattr__(self, "site_index", np.argmax(S, axis=1))

    @property
    def mesh(self) -> Mesh:
        return self.metric.mesh

    @property
    def gram(self):
        return self.metric.gram

    @property
    def size(self) -> int:
        return self.selector.shape[1]

    @cached_property
    def moments(self):
        return node_moments(self.metric, self.site_index, self.data)

    def without_constraints(self) -> "QPProblem":
        return QPProblem(
            self.metric, self.selector, self.data,
            LinearInequalities.empty(self.size), self.site_index,
        )


def build_problem(k: Kernel, mesh: Mesh, data: DataSet, constraints=None) -> QPProblem:
    """Assemble the discrete problem; every data site must be a mesh node.

    ``constraints`` may be a :class:`ConstraintSet`, ready-made
    :class:`LinearInequalities` or ``None``.
    """
    try:
        idx = mesh.node_index(data.xs)
    except ValueError as exc:
        raise PreconditionError(f"data sites must belong to the mesh: {exc}") from None
    metric = HnMetric.build(k, mesh)
    S = np.zeros((data.n, mesh.nodes.size))
    S[np.arange(data.n), idx] = 1.0
    if constraints is None:
        ineq = LinearInequalities.empty(mesh.nodes.size)
    elif isinstance(constraints, ConstraintSet):
        ineq = compile_constraints(constraints, mesh)
    else:
        ineq = constraints
    return QPProblem(metric, S, data, ineq, idx)


@dataclass(frozen=True)
class NodeMoments:
    mean: np.ndarray
    cov: np.ndarray
    data_term: float  # y^T (S Gamma S^T + sigma^2 I)^{-1} y, the unconstrained optimum


def node_moments(metric: HnMetric, site_index, data: DataSet) -> NodeMoments:
    """Mean and covariance of the node values given the observations."""
    gam = metric.gram.values
    idx = np.asarray(site_index)
    B = gam[idx, :]
    A = B[:, idx] + data.noise_var * np.eye(idx.size)
    L = linalg.cholesky(A, lower=True, check_finite=False)
    W = linalg.solve_triangular(L, B, lower=True, check_finite=False)
    z = linalg.solve_triangular(L, data.ys, lower=True, check_finite=False)
    mean = W.T @ z
    cov = gam - W.T @ W
    cov = 0.5 * (cov + cov.T)
    return NodeMoments(mean, cov, float(z @ z))


def objective_jn(p: QPProblem, c) -> float:
    """``c^T Gamma^{-1} c + ||S c - y||^2 / sigma^2``."""
    c = np.asarray(c, dtype=float)
    if c.shape != (p.size,):
        raise ValueError(f"coefficient vector has shape {c.shape}, expected ({p.size},)")
    r = c[p.site_index] - p.data.ys
    return hn_inner(p.metric, c, c) + float(r @ r) / p.data.noise_var


def objective_j_on_span(k: Kernel, sites, alpha, data: DataSet) -> float:
    """Exact smoothing objective of ``h = sum_k alpha_k K(., s_k)``."""
    sites = np.asarray(sites, dtype=float).ravel()
    alpha = np.asarray(alpha, dtype=float).ravel()
    if np.unique(sites).size != sites.size:
        raise ValueError("kernel-span sites must be distinct")
    norm_sq = float(alpha @ k.matrix(sites) @ alpha)
    r = k.matrix(data.xs, sites) @ alpha - data.ys
    return norm_sq + float(r @ r) / data.noise_var


def solve_closed_form(k: Kernel, data: DataSet, query):
    """Unconstrained smoother ``y (K + sigma^2 I)^{-1} k(t)`` at the query points."""
    query = np.asarray(query, dtype=float)
    A = k.matrix(data.xs) + data.noise_var * np.eye(data.n)
    w = linalg.cho_solve(linalg.cho_factor(A, lower=True), data.ys)
    return k(query[..., None], data.xs) @ w


@dataclass(frozen=True)
class KKTResiduals:
    stationarity: float
    primal: float
    complementarity: float

    def within_tolerance(self) -> bool:
        return (
            self.stationarity <= STATIONARITY_TOL
            and self.primal <= PRIMAL_TOL
            and self.complementarity <= COMPLEMENTARITY_TOL
        )

    def as_dict(self) -> dict:
        return {
            "stationarity": self.stationarity,
            "primal": self.primal,
            "complementarity": self.complementarity,
        }


@dataclass(frozen=True, eq=False)
class Solution:
    u_hat: PiecewiseLinearFn
    objective: float
    multipliers: np.ndarray
    active_set: tuple
    kkt_residuals: KKTResiduals
    iterations: int
    working_set: tuple = ()

    @property
    def coeffs(self) -> np.ndarray:
        return self.u_hat.coeffs


def kkt_residuals(p: QPProblem, c, multipliers) -> KKTResiduals:
    """Residuals of the optimality system at ``(c, multipliers)``.

    Stationarity ``grad J_N(c) = G^T lambda`` is measured after multiplying
    by ``Sigma / 2``, i.e. as ``c - mu - Sigma G^T lambda / 2``, relative to
    the coefficient scale; this is the same condition without an
    application of ``Gamma^{-1}``.
    """
    c = np.asarray(c, dtype=float)
    lam = np.asarray(multipliers, dtype=float)
    mom = p.moments
    G, h = p.ineq.G, p.ineq.h
    r = c - mom.mean
    if lam.size:
        r = r - 0.5 * (mom.cov @ (G.T @ lam))
    scale = max(1.0, float(np.max(np.abs(c))), float(np.max(np.abs(mom.mean))))
    stat = float(np.max(np.abs(r))) / scale
    if h.size:
        slack = G @ c - h
        primal = float(max(0.0, -slack.min()))
        comp = float(np.max(np.abs(lam * slack))) if lam.size else 0.0
    else:
        primal = comp = 0.0
    return KKTResiduals(stat, primal, comp)


def _active_rows(ineq: LinearInequalities, c, tol=FEAS_TOL):
    if ineq.m == 0:
        return ()
    return tuple(int(i) for i in np.flatnonzero(np.abs(ineq.slack(c)) <= tol))


def _finish(p, c, lam, iterations, working=()):
    return Solution(
        u_hat=PiecewiseLinearFn(p.mesh, c),
        objective=objective_jn(p, c),
        multipliers=lam,
        active_set=_active_rows(p.ineq, c),
        kkt_residuals=kkt_residuals(p, c, lam),
        iterations=iterations,
        working_set=tuple(working),
    )


def solve_unconstrained(p: QPProblem) -> Solution:
    """Minimizer of ``J_N`` over all piecewise-linear functions.

    This is the solution of ``(Gamma^{-1} + S^T S / sigma^2) c = S^T y / sigma^2``,
    obtained in the equivalent form ``c = Gamma S^T (S Gamma S^T + sigma^2 I)^{-1} y``.
    """
    q = p.without_constraints() if p.ineq.m else p
    c = q.moments.mean.copy()
    return _finish(q, c, np.zeros(0), 0)


def check_feasible(ineq: LinearInequalities):
    """Minimum-norm feasible point; raises :class:`InfeasibleError` if none exists."""
    if ineq.m == 0:
        return np.zeros(ineq.dim)
    try:
        return least_distance_point(ineq.G, ineq.h)
    except InfeasibleError:
        raise InfeasibleError(
            "constraint set contains no piecewise-linear function on this mesh"
        ) from None


def _independent_subset(G, candidates):
    chosen = []
    for i in candidates:
        trial = G[chosen + [i]]
        if np.linalg.matrix_rank(trial, tol=1e-10 * max(1.0, np.abs(trial).max())) == len(chosen) + 1:
            chosen.append(i)
    return chosen


def solve_constrained(p: QPProblem, start=None, max_iter=None) -> Solution:
    """Primal active-set method for ``min J_N(c)`` subject to ``G c >= h``.

    Parameters
    ----------
    p : QPProblem
    start : array_like, optional
        Feasible starting point.  By default the Euclidean projection of the
        unconstrained minimizer onto the feasible set is used.
    max_iter : int, optional
        Iteration budget, ``50 (N + m)`` by default.

    Raises
    ------
    InfeasibleError
        If the constraint rows admit no point at all.
    MaxIterationsError
        If the budget runs out; the last iterate is attached.
    """
    ineq = p.ineq
    G, h = ineq.G, ineq.h
    m = ineq.m
    mom = p.moments
    mu, cov = mom.mean, mom.cov
    if m == 0:
        return _finish(p, mu.copy(), np.zeros(0), 0)
    check_feasible(ineq)
    if max_iter is None:
        max_iter = 50 * (p.size + m)

    if start is None:
        if np.min(G @ mu - h) >= 0.0:
            return _finish(p, mu.copy(), np.zeros(m), 0)
        x = project_euclidean(ineq, mu)
    else:
        x = np.array(start, dtype=float)
        if x.shape != (p.size,) or np.min(G @ x - h) < -PRIMAL_TOL:
            raise PreconditionError("starting point must be feasible")

    slack0 = G @ x - h
    working = _independent_subset(G, [int(i) for i in np.flatnonzero(slack0 <= FEAS_TOL)])
    cov_gt = cov @ G.T  # Sigma G^T, reused by every subproblem
    row_norm = np.abs(G).sum(axis=1)
    lam_w = np.zeros(0)

    for it in range(1, max_iter + 1):
        if working:
            Gw = G[working]
            M = Gw @ cov_gt[:, working]
            rhs = h[working] - Gw @ mu
            try:
                lam_w = 2.0 * linalg.solve(M, rhs, assume_a="pos", check_finite=False)
            except (linalg.LinAlgError, ValueError):
                lam_w = 2.0 * np.linalg.lstsq(M, rhs, rcond=None)[0]
            target = mu + 0.5 * (cov_gt[:, working] @ lam_w)
        else:
            lam_w = np.zeros(0)
            target = mu
        step = target - x
        scale = max(1.0, float(np.max(np.abs(x))), float(np.max(np.abs(target))))

        alpha, blocking = 1.0, None
        if np.max(np.abs(step)) > 1e-14 * scale:
            outside = np.ones(m, dtype=bool)
            outside[working] = False
            Gs = G @ step
            # Rows in the span of the working set have G_i . step = 0 up to rounding.
            noise = 1e-11 * row_norm * np.max(np.abs(step))
            cand = np.flatnonzero(outside & (Gs < -noise))
            if cand.size:
                slack = np.maximum(G[cand] @ x - h[cand], 0.0)
                ratios = slack / -Gs[cand]
                j = int(np.argmin(ratios))  # first minimum, i.e. smallest row index
                if ratios[j] < 1.0:
                    alpha, blocking = float(ratios[j]), int(cand[j])

        if blocking is None:
            x = target
            if lam_w.size == 0 or lam_w.min() >= -MULTIPLIER_TOL * max(1.0, np.abs(lam_w).max()):
                lam = np.zeros(m)
                lam[working] = lam_w
                return _finish(p, x, lam, it, working)
            drop = int(np.argmin(lam_w))
            del working[drop]
        else:
            x = x + alpha * step
            working.append(blocking)
            order = np.argsort(working, kind="stable")
            working = [working[i] for i in order]

    lam = np.zeros(m)
    if lam_w.size == len(working):
        lam[working] = lam_w
    raise MaxIterationsError(
        f"active-set method did not converge in {max_iter} iterations",
        coeffs=x,
        residuals=kkt_residuals(p, x, lam),
        iterations=max_iter,
    )


def brute_oracle(p: QPProblem) -> Solution:
    """Solve the QP by enumerating every candidate active set.

    Works on the primal KKT system with the explicit Hessian
    ``2 (Gamma^{-1} + S^T S / sigma^2)``, independently of the active-set
    solver.  Limited to at most 12 constraint rows.
    """
    ineq = p.ineq
    m = ineq.m
    if m > BRUTE_MAX_ROWS:
        raise SizeError(f"brute-force oracle supports at most {BRUTE_MAX_ROWS} rows, got {m}")
    n = p.size
    S = p.selector
    gam_inv = gram_solve(p.gram, np.eye(n))
    gam_inv = 0.5 * (gam_inv + gam_inv.T)
    H = 2.0 * (gam_inv + S.T @ S / p.data.noise_var)
    lin = -2.0 * S.T @ p.data.ys / p.data.noise_var
    G, h = ineq.G, ineq.h

    best_c, best_lam, best_val = None, None, np.inf
    evaluated = 0
    for size in range(m + 1):
        for subset in itertools.combinations(range(m), size):
            evaluated += 1
            idx = list(subset)
            Ga = G[idx]
            K = np.zeros((n + size, n + size))
            K[:n, :n] = H
            K[:n, n:] = -Ga.T
            K[n:, :n] = Ga
            rhs = np.concatenate([-lin, h[idx]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            if not np.allclose(K @ sol, rhs, rtol=1e-9, atol=1e-9):
                continue
            c, lam_a = sol[:n], sol[n:]
            if m and np.min(G @ c - h) < -PRIMAL_TOL:
                continue
            if size and lam_a.min() < -1e-9 * max(1.0, np.abs(lam_a).max()):
                continue
            val = objective_jn(p, c)
            if val < best_val:
                lam = np.zeros(m)
                lam[idx] = lam_a
                best_c, best_lam, best_val = c, lam, val
    if best_c is None:
        raise SolverError("no candidate active set satisfies the KKT conditions")
    return _finish(p, best_c, best_lam, evaluated)
