"""Posterior of the node values and its truncation to the constraint set.

With the prior ``xi ~ N(0, Gamma)`` on node values and Gaussian noise, the
posterior density of a coefficient vector is proportional to
``exp(-J_N(c) / 2)``; restricting it to ``{G c >= h}`` only adds an
indicator.  Its mode is therefore the constrained QP solution, while its
mean is not.  :func:`map_equals_qp` checks the first statement empirically
and :func:`rejection_sample` draws from the truncated law to expose the
second.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.optimize import linprog

from .constraints import FEAS_TOL, LinearInequalities, is_feasible
from .errors import LowAcceptanceError
from .kernel import Kernel
from .mesh import HnMetric, Mesh
from .solver import DataSet, QPProblem, Solution, node_moments, objective_jn, solve_constrained

__all__ = [
    "NodePosterior",
    "SampleBatch",
    "MapReport",
    "log_posterior_unnorm",
    "log_posterior_batch",
    "node_posterior",
    "map_equals_qp",
    "draw_attempts",
    "rejection_sample",
]

_CHUNK = 4096
_PSD_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class NodePosterior:
    """Gaussian law of the node values given the data (no constraints)."""

    mean: np.ndarray
    cov: np.ndarray

    def sampling_factor(self) -> np.ndarray:
        """``F`` with ``F F^T = cov`` from a clipped eigendecomposition."""
        w, V = linalg.eigh(self.cov)
        if w.min() < -_PSD_TOL * max(1.0, w.max()):
            raise ValueError(f"posterior covariance is not PSD (eigenvalue {w.min():.3e})")
        return V * np.sqrt(np.clip(w, 0.0, None))


def node_posterior(k: Kernel, m: Mesh, data: DataSet) -> NodePosterior:
    """Condition ``N(0, Gamma)`` on the observations at the data nodes."""
    metric = HnMetric.build(k, m)
    mom = node_moments(metric, m.node_index(data.xs), data)
    return NodePosterior(mom.mean, mom.cov)


def log_posterior_unnorm(p: QPProblem, c) -> float:
    """``-J_N(c) / 2`` on the feasible set, ``-inf`` outside it."""
    c = np.asarray(c, dtype=float)
    if not is_feasible(p.ineq, c):
        return -math.inf
    return -0.5 * objective_jn(p, c)


def log_posterior_batch(p: QPProblem, C) -> np.ndarray:
    """Vectorized :func:`log_posterior_unnorm` over the rows of ``C``."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Z = linalg.solve_triangular(p.gram.factor, C.T, lower=True, check_finite=False)
    R = C[:, p.site_index] - p.data.ys
    J = np.einsum("ij,ij->j", Z, Z) + np.einsum("ij,ij->i", R, R) / p.data.noise_var
    out = -0.5 * J
    if p.ineq.m:
        slack = C @ p.ineq.G.T - p.ineq.h
        out[slack.min(axis=1) < -FEAS_TOL] = -np.inf
    return out


@dataclass(frozen=True)
class MapReport:
    """Outcome of a MAP optimality probe around a QP solution."""

    trials: int
    radius: float
    log_post_map: float
    violations: list = field(default_factory=list)
    moved: int = 0

    @property
    def passed(self) -> bool:
        return not self.violations


def _interior_anchor(ineq: LinearInequalities, center, radius):
    """Point of the constraint set, well inside it, in a box around ``center``."""
    G, h = ineq.G, ineq.h
    n = center.size
    norms = np.linalg.norm(G, axis=1)
    # Variables (x, r); maximize r subject to G x - r |G_i| >= h.
    A_ub = np.hstack([-G, norms[:, None]])
    b_ub = -h
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    bounds = [(ci - radius, ci + radius) for ci in center] + [(0.0, radius)]
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0 or res.x[-1] <= 1e-12 * max(1.0, radius):
        return center.copy()
    return res.x[:n]


def map_equals_qp(p: QPProblem, trials: int, radius: float, seed: int,
                  solution: Solution | None = None) -> MapReport:
    """Probe that no feasible point near the QP solution has higher posterior.

    Candidates are ``u_hat + radius * d`` with ``d`` uniform in the unit
    ball.  An infeasible candidate is pulled back to the boundary along the
    segment towards an interior point of the constraint set near ``u_hat``,
    so every probe is feasible.  A violation is a probe whose unnormalized
    log posterior exceeds that of ``u_hat`` by more than ``1e-10`` relative.
    """
    if solution is None:
        solution = solve_constrained(p)
    u = solution.coeffs
    base = log_posterior_unnorm(p, u)
    if trials <= 0:
        return MapReport(0, float(radius), base)
    rng = np.random.default_rng(seed)
    n = u.size
    D = rng.standard_normal((trials, n))
    D /= np.linalg.norm(D, axis=1, keepdims=True)
    D *= rng.uniform(size=(trials, 1)) ** (1.0 / n)
    Z = u + radius * D

    moved = 0
    if p.ineq.m:
        G, h = p.ineq.G, p.ineq.h
        bad = (Z @ G.T - h).min(axis=1) < 0.0
        moved = int(bad.sum())
        if moved:
            a = _interior_anchor(p.ineq, u, radius)
            slack_a = np.maximum(G @ a - h, 0.0)
            Dz = (Z[bad] - a) @ G.T
            with np.errstate(divide="ignore", invalid="ignore"):
                s = np.where(Dz < 0, slack_a / -Dz, np.inf)
            s = np.minimum(1.0, s.min(axis=1))
            Z[bad] = a + s[:, None] * (Z[bad] - a)

    lp = log_posterior_batch(p, Z)
    tol = 1e-10 * max(1.0, abs(base))
    worse = np.flatnonzero(lp > base + tol)
    violations = [(int(i), float(lp[i] - base)) for i in worse]
    return MapReport(int(trials), float(radius), base, violations, moved)


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Accepted draws of a rejection sampler and its bookkeeping."""

    draws: np.ndarray
    attempted: int
    accepted: int
    seed: int

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempted if self.attempted else 0.0

    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)

    def standard_error(self) -> np.ndarray:
        return self.draws.std(axis=0, ddof=1) / np.sqrt(self.accepted)

    def write_csv(self, path, nodes=None):
        """One row per draw, then a ``mean`` row and an ``acceptance_rate`` row."""
        k = self.draws.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row"] + [f"c_{j}" for j in range(k)])
            if nodes is not None:
                w.writerow(["nodes"] + [_fmt(t) for t in nodes])
            for i, d in enumerate(self.draws):
                w.writerow([i] + [_fmt(v) for v in d])
            if self.accepted:
                w.writerow(["mean"] + [_fmt(v) for v in self.mean()])
            w.writerow(["acceptance_rate", _fmt(self.acceptance_rate)] + [""] * (k - 1))


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _shard(mean, factor, G, h, count, budget, seq):
    """Draw in fixed-size chunks until ``count`` accepted or ``budget`` spent."""
    rng = np.random.default_rng(seq)
    n = mean.size
    kept, attempted = [], 0
    got = 0
    while got < count and attempted < budget:
        size = min(_CHUNK, budget - attempted)
        X = mean + rng.standard_normal((size, n)) @ factor.T
        ok = (X @ G.T - h).min(axis=1) >= 0.0 if h.size else np.ones(size, dtype=bool)
        idx = np.flatnonzero(ok)
        need = count - got
        if idx.size >= need:
            last = idx[need - 1]
            kept.append(X[idx[:need]])
            attempted += int(last) + 1
            got = count
            break
        kept.append(X[idx])
        got += idx.size
        attempted += size
    draws = np.vstack(kept) if kept else np.zeros((0, n))
    return draws, attempted


def _run(post, li, count, budget, seed, threads):
    factor = post.sampling_factor()
    G, h = li.G, li.h
    threads = max(1, int(threads))
    if threads == 1:
        return _shard(post.mean, factor, G, h, count, budget, np.random.SeedSequence(seed))
    seqs = np.random.SeedSequence(seed).spawn(threads)
    counts = [count // threads + (i < count % threads) for i in range(threads)]
    budgets = [budget // threads + (i < budget % threads) for i in range(threads)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(
            lambda a: _shard(post.mean, factor, G, h, *a),
            zip(counts, budgets, seqs),
        ))
    draws = np.vstack([d for d, _ in parts])
    return draws, sum(a for _, a in parts)


def draw_attempts(post: NodePosterior, li: LinearInequalities, attempts: int,
                  seed: int) -> SampleBatch:
    """Spend exactly ``attempts`` Gaussian draws and keep the feasible ones."""
    draws, attempted = _run(post, li, attempts, attempts, seed, 1)
    return SampleBatch(draws, attempted, draws.shape[0], int(seed))


def rejection_sample(post: NodePosterior, li: LinearInequalities, count: int,
                     max_attempts: int, seed: int, threads: int = 1) -> SampleBatch:
    """Exact draws from ``N(mean, cov)`` truncated to ``{G c >= h}``.

    With ``threads > 1`` the count and the attempt budget are split evenly
    over shards seeded by ``SeedSequence(seed).spawn(threads)``, so the
    result is deterministic for a given ``(seed, threads)``.

    Raises
    ------
    LowAcceptanceError
        If the attempt budget runs out first; the partial batch is attached.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    draws, attempted = _run(post, li, count, max_attempts, seed, threads)
    batch = SampleBatch(draws, attempted, draws.shape[0], int(seed))
    if batch.accepted < count:
        raise LowAcceptanceError(
            f"only {batch.accepted} of {count} draws accepted after {attempted} attempts "
            f"(acceptance rate {batch.acceptance_rate:.3g})",
            rate=batch.acceptance_rate,
            batch=batch,
        )
    return batch
