"""Nested subdivisions of [0, 1], the hat basis, and the discrete metric.

A :class:`Mesh` always contains 0, 1 and every data site, and refining it
inserts the midpoint of every gap, so successive meshes are nested.  Its
piecewise-linear functions carry the inner product ``c_u^T Gamma^{-1} c_v``
through :class:`HnMetric`; the lift :func:`rho_coeffs` maps such a function
to the kernel expansion with the same node values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DomainError, MeshMismatchError
from .kernel import GramMatrix, Kernel, build_gram, gram_solve

__all__ = [
    "Mesh",
    "PiecewiseLinearFn",
    "HnMetric",
    "hat_eval",
    "basis_matrix",
    "interpolate",
    "eval_fn",
    "kn_eval",
    "hn_inner",
    "rho_coeffs",
    "rho_eval",
    "h_norm_sq_of_lift",
]


def _as_unit(x, what="x"):
    x = np.asarray(x, dtype=float)
    if x.size and (not np.all(np.isfinite(x)) or x.min() < 0.0 or x.max() > 1.0):
        raise DomainError(f"{what} must lie in [0, 1]")
    return x


@dataclass(frozen=True, eq=False)
class Mesh:
    """Strictly increasing nodes ``0 = t_0 < ... < t_N = 1``.

    ``data_sites`` holds the distinct observation locations; each one is a
    node.  ``level`` counts refinement generations from the base mesh.
    """

    nodes: np.ndarray
    data_sites: np.ndarray
    level: int = 0

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float).ravel()
        sites = np.unique(np.asarray(self.data_sites, dtype=float).ravel())
        if nodes.size < 2 or nodes[0] != 0.0 or nodes[-1] != 1.0:
            raise DomainError("mesh nodes must start at 0 and end at 1")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("mesh nodes must be strictly increasing")
        if sites.size:
            pos = np.searchsorted(nodes, sites)
            if np.any(pos >= nodes.size) or np.any(nodes[np.minimum(pos, nodes.size - 1)] != sites):
                raise ValueError("every data site must be a mesh node")
        nodes.setflags(write=False)
        sites.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "data_sites", sites)
        object.__setattr__(self, "level", int(self.level))

    @classmethod
    def from_sites(cls, sites=(), level: int = 0) -> "Mesh":
        """Base mesh ``{0, 1} U sites`` refined ``level`` times."""
        sites = _as_unit(np.asarray(sites, dtype=float).ravel(), "data sites")
        base = np.unique(np.concatenate([[0.0, 1.0], sites]))
        mesh = cls(base, sites, 0)
        for _ in range(level):
            mesh = mesh.refine()
        return mesh

    @classmethod
    def uniform(cls, n_intervals: int, sites=()) -> "Mesh":
        """Uniform mesh with ``n_intervals`` gaps plus any extra data sites."""
        sites = _as_unit(np.asarray(sites, dtype=float).ravel(), "data sites")
        nodes = np.unique(np.concatenate([np.linspace(0.0, 1.0, n_intervals + 1), sites]))
        return cls(nodes, sites, 0)

    def refine(self) -> "Mesh":
        """Insert the midpoint of every gap (nested by construction)."""
        mids = 0.5 * (self.nodes[:-1] + self.nodes[1:])
        nodes = np.empty(2 * self.nodes.size - 1)
        nodes[0::2] = self.nodes
        nodes[1::2] = mids
        return Mesh(nodes, self.data_sites, self.level + 1)

    @property
    def n(self) -> int:
        """Index of the last node (the mesh has ``n + 1`` nodes)."""
        return self.nodes.size - 1

    @property
    def width(self) -> float:
        return float(np.max(np.diff(self.nodes)))

    def node_index(self, x) -> np.ndarray:
        """Indices of nodes equal to the given points; raises if one is off-mesh."""
        x = np.asarray(x, dtype=float).ravel()
        pos = np.searchsorted(self.nodes, x)
        ok = (pos < self.nodes.size) & (self.nodes[np.minimum(pos, self.n)] == x)
        if not np.all(ok):
            bad = x[~ok]
            raise ValueError(f"points {bad[:5].tolist()} are not mesh nodes")
        return pos

    def locate(self, x):
        """Interval index and right-hand weight of each point.

        A point sitting on an interior node is assigned to the interval on
        its left.
        """
        x = _as_unit(x)
        idx = np.searchsorted(self.nodes, x, side="left") - 1
        idx = np.clip(idx, 0, self.n - 1)
        left = self.nodes[idx]
        w = (x - left) / (self.nodes[idx + 1] - left)
        return idx, w

    def same_as(self, other: "Mesh") -> bool:
        return self is other or (
            self.nodes.shape == other.nodes.shape
            and bool(np.all(self.nodes == other.nodes))
        )


@dataclass(frozen=True, eq=False)
class PiecewiseLinearFn:
    """Continuous piecewise-linear function stored by its node values."""

    mesh: Mesh
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).ravel()
        if c.size != self.mesh.nodes.size:
            raise ValueError(
                f"expected {self.mesh.nodes.size} coefficients, got {c.size}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __call__(self, x):
        return eval_fn(self, x)


def hat_eval(m: Mesh, j: int, x):
    """Hat function ``phi_j`` at ``x``: 1 at ``t_j``, 0 at the other nodes."""
    if not 0 <= j <= m.n:
        raise IndexError(f"hat index {j} out of range 0..{m.n}")
    x = _as_unit(x)
    t = m.nodes
    out = np.zeros_like(x, dtype=float)
    if j > 0:
        sel = (x >= t[j - 1]) & (x <= t[j])
        out = np.where(sel, (x - t[j - 1]) / (t[j] - t[j - 1]), out)
    if j < m.n:
        sel = (x >= t[j]) & (x <= t[j + 1])
        out = np.where(sel, (t[j + 1] - x) / (t[j + 1] - t[j]), out)
    return out if out.ndim else float(out)


def basis_matrix(m: Mesh, x) -> np.ndarray:
    """Dense matrix ``Phi`` with ``Phi[k, j] = phi_j(x_k)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    idx, w = m.locate(x)
    phi = np.zeros((x.size, m.nodes.size))
    rows = np.arange(x.size)
    phi[rows, idx] = 1.0 - w
    phi[rows, idx + 1] += w
    return phi


def interpolate(m: Mesh, f) -> PiecewiseLinearFn:
    """The interpolant ``sum_j f(t_j) phi_j``.

    ``f`` is any callable on [0, 1]; vectorized callables are evaluated on
    all nodes at once, others point by point.
    """
    if isinstance(f, PiecewiseLinearFn) and f.mesh.same_as(m):
        return PiecewiseLinearFn(m, f.coeffs)
    try:
        vals = np.asarray(f(m.nodes), dtype=float)
        if vals.shape != m.nodes.shape:
            raise ValueError
    except (TypeError, ValueError):
        vals = np.array([float(f(t)) for t in m.nodes])
    return PiecewiseLinearFn(m, vals)


def eval_fn(u: PiecewiseLinearFn, x):
    """Evaluate ``sum_j c_j phi_j(x)``; exact at nodes, affine in between."""
    x = np.asarray(x, dtype=float)
    idx, w = u.mesh.locate(x)
    c = u.coeffs
    out = (1.0 - w) * c[idx] + w * c[idx + 1]
    return out if out.ndim else float(out)


def kn_eval(m: Mesh, g: GramMatrix, x, x2) -> float:
    """Discrete kernel ``phi(x)^T Gamma phi(x2)``."""
    _check_gram(m, g)
    p = basis_matrix(m, x)[0]
    q = basis_matrix(m, x2)[0]
    return float(q @ g.values @ p)


def _check_gram(m: Mesh, g: GramMatrix):
    if g.nodes.shape != m.nodes.shape or not np.all(g.nodes == m.nodes):
        raise MeshMismatchError("Gram matrix was built on a different mesh")


@dataclass(frozen=True, eq=False)
class HnMetric:
    """Inner product ``(u, v) = c_u^T Gamma^{-1} c_v`` on a mesh."""

    mesh: Mesh
    gram: GramMatrix

    def __post_init__(self):
        _check_gram(self.mesh, self.gram)

    @classmethod
    def build(cls, k: Kernel, m: Mesh) -> "HnMetric":
        return cls(m, build_gram(k, m.nodes))

    def _coeffs(self, v) -> np.ndarray:
        if isinstance(v, PiecewiseLinearFn):
            if not v.mesh.same_as(self.mesh):
                raise MeshMismatchError("function lives on a different mesh")
            return v.coeffs
        c = np.asarray(v, dtype=float)
        if c.shape != self.mesh.nodes.shape:
            raise MeshMismatchError(
                f"coefficient vector has length {c.size}, mesh has {self.mesh.nodes.size} nodes"
            )
        return c

    def norm_sq(self, v) -> float:
        return hn_inner(self, v, v)


def hn_inner(metric: HnMetric, u, v) -> float:
    """``c_u^T Gamma^{-1} c_v``; accepts functions or raw coefficient vectors."""
    cu = metric._coeffs(u)
    cv = metric._coeffs(v)
    if cu is cv or np.array_equal(cu, cv):
        # Symmetric form ||L^{-1} c||^2 is exactly nonnegative.
        z = _forward(metric.gram, cu)
        return float(z @ z)
    return float(_forward(metric.gram, cu) @ _forward(metric.gram, cv))


def _forward(g: GramMatrix, c):
    return solve_triangular(g.factor, c, lower=True, check_finite=False)


def rho_coeffs(metric: HnMetric, v) -> np.ndarray:
    """Weights ``Lambda`` of the lift, solving ``Gamma Lambda = c_v``."""
    return gram_solve(metric.gram, metric._coeffs(v))


def rho_eval(metric: HnMetric, k: Kernel, v, x):
    """Evaluate the lift ``sum_i Lambda_i K(x, t_i)`` of ``v`` at ``x``."""
    lam = rho_coeffs(metric, v)
    x = _as_unit(x)
    out = k(x[..., None], metric.mesh.nodes) @ lam
    return out if np.ndim(out) else float(out)


def h_norm_sq_of_lift(metric: HnMetric, v) -> float:
    """RKHS norm of the lift as the quadratic form ``Lambda^T Gamma Lambda``.

    ``Gamma`` is the Gram matrix including any jitter, i.e. the same matrix
    that defines the discrete metric.
    """
    lam = rho_coeffs(metric, v)
    return float(lam @ metric.gram.values @ lam)
