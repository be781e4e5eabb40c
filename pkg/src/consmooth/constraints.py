"""Convex shape constraints and their exact encoding on hat coefficients.

For continuous piecewise-linear functions the supported atoms are exactly
linear inequalities on node values: bounds hold everywhere iff they hold at
the nodes, monotonicity iff consecutive node values are ordered, convexity
iff consecutive slopes are nondecreasing.  The same facts make the constraint
classes stable under linear interpolation, which :func:`project_check` tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .errors import ContradictionError, InfeasibleError, PreconditionError
from .mesh import Mesh

__all__ = [
    "FEAS_TOL",
    "LowerBound",
    "UpperBound",
    "Monotone",
    "Shape",
    "ConstraintSet",
    "LinearInequalities",
    "compile",
    "compile_constraints",
    "is_feasible",
    "satisfies_on_grid",
    "project_check",
    "least_distance_point",
    "project_euclidean",
]

FEAS_TOL = 1e-9


@dataclass(frozen=True)
class LowerBound:
    l: float


@dataclass(frozen=True)
class UpperBound:
    b: float


@dataclass(frozen=True)
class Monotone:
    direction: str = "increasing"

    def __post_init__(self):
        if self.direction not in ("increasing", "decreasing"):
            raise ValueError(f"monotone direction must be 'increasing' or 'decreasing', got {self.direction!r}")


@dataclass(frozen=True)
class Shape:
    curvature: str = "convex"

    def __post_init__(self):
        if self.curvature not in ("convex", "concave"):
            raise ValueError(f"shape must be 'convex' or 'concave', got {self.curvature!r}")


@dataclass(frozen=True)
class ConstraintSet:
    """Intersection of constraint atoms; the empty set of atoms means no constraint."""

    atoms: tuple = ()

    def __post_init__(self):
        atoms = tuple(self.atoms)
        for a in atoms:
            if not isinstance(a, (LowerBound, UpperBound, Monotone, Shape)):
                raise TypeError(f"unsupported constraint atom {a!r}")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def from_config(cls, cfg) -> "ConstraintSet":
        """Parse ``{"bounds": [l, b] | null, "monotone": ..., "shape": ...}``.

        Either bound may be ``null`` for a one-sided constraint.
        """
        if cfg is None:
            return cls()
        if not isinstance(cfg, dict):
            raise ValueError("constraints must be an object")
        unknown = set(cfg) - {"bounds", "monotone", "shape"}
        if unknown:
            raise ValueError(f"unknown constraint fields: {sorted(unknown)}")
        atoms = []
        bounds = cfg.get("bounds")
        if bounds is not None:
            if not isinstance(bounds, (list, tuple)) or len(bounds) != 2:
                raise ValueError("constraints.bounds must be [lower, upper]")
            lo, hi = bounds
            if lo is not None:
                atoms.append(LowerBound(float(lo)))
            if hi is not None:
                atoms.append(UpperBound(float(hi)))
        if cfg.get("monotone") is not None:
            atoms.append(Monotone(cfg["monotone"]))
        if cfg.get("shape") is not None:
            atoms.append(Shape(cfg["shape"]))
        return cls(tuple(atoms))

    def to_config(self) -> dict:
        lo = hi = None
        cfg = {"bounds": None, "monotone": None, "shape": None}
        for a in self.atoms:
            if isinstance(a, LowerBound):
                lo = a.l if lo is None else max(lo, a.l)
            elif isinstance(a, UpperBound):
                hi = a.b if hi is None else min(hi, a.b)
            elif isinstance(a, Monotone):
                cfg["monotone"] = a.direction
            else:
                cfg["shape"] = a.curvature
        if lo is not None or hi is not None:
            cfg["bounds"] = [lo, hi]
        return cfg

    def check_consistent(self):
        lows = [a.l for a in self.atoms if isinstance(a, LowerBound)]
        highs = [a.b for a in self.atoms if isinstance(a, UpperBound)]
        if lows and highs and max(lows) > min(highs):
            raise ContradictionError(
                f"lower bound {max(lows)} exceeds upper bound {min(highs)}: constraint set is empty"
            )


@dataclass(frozen=True, eq=False)
class LinearInequalities:
    """Polyhedron ``{c : G c >= h}`` in coefficient space."""

    G: np.ndarray
    h: np.ndarray
    labels: tuple = field(default=())

    def __post_init__(self):
        G = np.array(self.G, dtype=float)
        h = np.array(self.h, dtype=float).ravel()
        if G.ndim != 2 or G.shape[0] != h.size:
            raise ValueError("G must be (m, n) with len(h) == m")
        labels = tuple(self.labels) or tuple(f"row {i}" for i in range(h.size))
        G.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def empty(cls, n: int) -> "LinearInequalities":
        return cls(np.zeros((0, n)), np.zeros(0))

    @property
    def m(self) -> int:
        return self.h.size

    @property
    def dim(self) -> int:
        return self.G.shape[1]

    def slack(self, c) -> np.ndarray:
        return self.G @ np.asarray(c, dtype=float) - self.h


def compile_constraints(cs: ConstraintSet, m: Mesh) -> LinearInequalities:
    """Encode ``cs`` as linear inequalities on the node values of ``m``.

    Raises
    ------
    ContradictionError
        If a lower bound exceeds an upper bound.
    """
    cs.check_consistent()
    n = m.nodes.size
    t = m.nodes
    rows, rhs, labels = [], [], []
    eye = np.eye(n)
    for atom in cs.atoms:
        if isinstance(atom, LowerBound):
            rows.append(eye)
            rhs.append(np.full(n, atom.l))
            labels += [f"lower bound at t_{j}" for j in range(n)]
        elif isinstance(atom, UpperBound):
            rows.append(-eye)
            rhs.append(np.full(n, -atom.b))
            labels += [f"upper bound at t_{j}" for j in range(n)]
        elif isinstance(atom, Monotone):
            sign = 1.0 if atom.direction == "increasing" else -1.0
            D = np.zeros((n - 1, n))
            idx = np.arange(n - 1)
            D[idx, idx] = -sign
            D[idx, idx + 1] = sign
            rows.append(D)
            rhs.append(np.zeros(n - 1))
            labels += [f"{atom.direction} on [t_{j}, t_{j + 1}]" for j in range(n - 1)]
        elif isinstance(atom, Shape):
            if n < 3:
                continue
            sign = 1.0 if atom.curvature == "convex" else -1.0
            inv = 1.0 / np.diff(t)
            D = np.zeros((n - 2, n))
            idx = np.arange(n - 2)
            D[idx, idx] = sign * inv[:-1]
            D[idx, idx + 1] = -sign * (inv[:-1] + inv[1:])
            D[idx, idx + 2] = sign * inv[1:]
            rows.append(D)
            rhs.append(np.zeros(n - 2))
            labels += [f"{atom.curvature} at t_{j + 1}" for j in range(n - 2)]
    if not rows:
        return LinearInequalities.empty(n)
    G = np.vstack(rows)
    h = np.concatenate(rhs)
    _, first = np.unique(np.column_stack([G, h]), axis=0, return_index=True)
    keep = np.sort(first)
    return LinearInequalities(G[keep], h[keep], tuple(labels[i] for i in keep))


# Public name of the compilation step; the long name avoids shadowing the builtin.
compile = compile_constraints


def is_feasible(li: LinearInequalities, c, tol: float = FEAS_TOL) -> bool:
    """``min(G c - h) >= -tol`` (vacuously true without rows)."""
    c = np.asarray(c, dtype=float)
    if c.shape != (li.dim,):
        raise ValueError(f"coefficient vector has shape {c.shape}, expected ({li.dim},)")
    if li.m == 0:
        return True
    return bool(np.min(li.slack(c)) >= -tol)


def satisfies_on_grid(cs: ConstraintSet, xs, values, tol: float = FEAS_TOL) -> bool:
    """Check the constraint atoms on samples ``values = f(xs)`` of a function.

    Curvature is tested through differences of consecutive secant slopes,
    which are nonnegative for samples of any convex function.
    """
    xs = np.asarray(xs, dtype=float)
    v = np.asarray(values, dtype=float)
    for atom in cs.atoms:
        if isinstance(atom, LowerBound):
            ok = v.min() >= atom.l - tol
        elif isinstance(atom, UpperBound):
            ok = v.max() <= atom.b + tol
        elif isinstance(atom, Monotone):
            d = np.diff(v)
            ok = (d.min() if atom.direction == "increasing" else -d.max()) >= -tol
        else:
            slopes = np.diff(v) / np.diff(xs)
            dd = np.diff(slopes)
            ok = dd.size == 0 or (dd.min() if atom.curvature == "convex" else -dd.max()) >= -tol
        if not ok:
            return False
    return True


def project_check(cs: ConstraintSet, m: Mesh, f, probe_grid: int = 10_001) -> bool:
    """Whether the interpolant of ``f`` on ``m`` satisfies ``cs``.

    ``f`` must itself satisfy ``cs`` on a uniform grid of ``probe_grid``
    points; otherwise :class:`PreconditionError` is raised, since a failure
    there says nothing about interpolation.
    """
    xs = np.linspace(0.0, 1.0, probe_grid)
    fx = _evaluate(f, xs)
    if not satisfies_on_grid(cs, xs, fx):
        raise PreconditionError("function does not satisfy the constraint set on the probe grid")
    return is_feasible(compile_constraints(cs, m), _evaluate(f, m.nodes))


def _evaluate(f, xs):
    try:
        v = np.asarray(f(xs), dtype=float)
        if v.shape == xs.shape:
            return v
    except (TypeError, ValueError):
        pass
    return np.array([float(f(x)) for x in xs])


def least_distance_point(G, h, tol: float = FEAS_TOL):
    """Minimum-norm ``x`` with ``G x >= h`` (Lawson-Hanson LDP through NNLS).

    Raises
    ------
    InfeasibleError
        If the system has no solution.
    """
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    n = G.shape[1]
    if h.size == 0 or np.all(h <= 0):
        return np.zeros(n)
    norms = np.linalg.norm(G, axis=1)
    norms[norms == 0.0] = 1.0
    G = G / norms[:, None]
    h = h / norms
    E = np.vstack([G.T, h[None, :]])
    f = np.zeros(n + 1)
    f[n] = 1.0
    u, _ = nnls(E, f, maxiter=50 * (E.shape[1] + 1))
    r = E @ u - f
    if not (r[n] < -1e-12):
        raise InfeasibleError("linear inequalities have no feasible point")
    x = -r[:n] / r[n]
    scale = max(1.0, float(np.max(np.abs(h))))
    if np.min(G @ x - h) < -tol * scale:
        raise InfeasibleError("linear inequalities have no feasible point")
    return x


def project_euclidean(li: LinearInequalities, z):
    """Euclidean projection of ``z`` onto ``{c : G c >= h}``."""
    z = np.asarray(z, dtype=float)
    if li.m == 0:
        return z.copy()
    return z + least_distance_point(li.G, li.h - li.G @ z)
