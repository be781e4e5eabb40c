"""Covariance kernels on [0, 1], Gram matrices and Cholesky-backed solves.

The Gram matrix of a kernel on the mesh nodes doubles as the prior
covariance of the node values and as the metric of the discrete space, so
every inverse application goes through its Cholesky factor and nothing here
ever forms an explicit inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DomainError, FactorizationError

__all__ = [
    "FAMILIES",
    "JITTER_LADDER",
    "Kernel",
    "KernelSpan",
    "GramMatrix",
    "eval_kernel",
    "build_gram",
    "gram_solve",
]

FAMILIES = (
    "squared_exponential",
    "matern32",
    "matern52",
    "brownian_plus_one",
    "brownian",
)

_ALIASES = {
    "squaredexponential": "squared_exponential",
    "se": "squared_exponential",
    "rbf": "squared_exponential",
    "matern32": "matern32",
    "matern52": "matern52",
    "brownianplusone": "brownian_plus_one",
    "brownian": "brownian",
}

_STATIONARY = ("squared_exponential", "matern32", "matern52")

# Relative to the largest diagonal entry of the Gram matrix.
JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)

_SQRT3 = np.sqrt(3.0)
_SQRT5 = np.sqrt(5.0)


def _normalize_family(name: str) -> str:
    key = str(name).lower().replace("_", "").replace("-", "").replace(" ", "")
    key = key.replace("é", "e")
    try:
        return _ALIASES[key]
    except KeyError:
        raise ValueError(
            f"unknown kernel family {name!r}; expected one of {', '.join(FAMILIES)}"
        ) from None


def _check_unit_interval(*arrays):
    for a in arrays:
        a = np.asarray(a, dtype=float)
        if a.size and (not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0):
            raise DomainError("kernel arguments must lie in [0, 1]")


@dataclass(frozen=True)
class Kernel:
    """A symmetric positive (semi-)definite covariance function on [0, 1].

    Parameters
    ----------
    family : str
        One of ``squared_exponential``, ``matern32``, ``matern52``,
        ``brownian_plus_one`` (``1 + min(s, t)``) or ``brownian``
        (``min(s, t)``, singular at 0, kept to exercise the jitter ladder).
    lengthscale : float
        Length scale of the stationary families; ignored by the Brownian ones.
    variance : float
        Output scale multiplying the whole kernel.
    """

    family: str = "matern32"
    lengthscale: float = 0.2
    variance: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", _normalize_family(self.family))
        object.__setattr__(self, "lengthscale", float(self.lengthscale))
        object.__setattr__(self, "variance", float(self.variance))
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"kernel variance must be positive, got {self.variance}")
        if self.family in _STATIONARY and not (
            np.isfinite(self.lengthscale) and self.lengthscale > 0
        ):
            raise ValueError(
                f"kernel lengthscale must be positive, got {self.lengthscale}"
            )

    @classmethod
    def from_config(cls, cfg: dict) -> "Kernel":
        """Build from ``{"family": ..., "lengthscale": ..., "variance": ...}``."""
        if not isinstance(cfg, dict) or "family" not in cfg:
            raise ValueError("kernel config must be an object with a 'family' field")
        unknown = set(cfg) - {"family", "lengthscale", "variance"}
        if unknown:
            raise ValueError(f"unknown kernel config fields: {sorted(unknown)}")
        return cls(
            family=cfg["family"],
            lengthscale=cfg.get("lengthscale", 0.2),
            variance=cfg.get("variance", 1.0),
        )

    def to_config(self) -> dict:
        return {
            "family": self.family,
            "lengthscale": self.lengthscale,
            "variance": self.variance,
        }

    def __call__(self, s, t):
        """Evaluate ``K(s, t)`` with numpy broadcasting."""
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        _check_unit_interval(s, t)
        return self._raw(s, t)

    def _raw(self, s, t):
        fam = self.family
        if fam == "brownian_plus_one":
            return self.variance * (1.0 + np.minimum(s, t))
        if fam == "brownian":
            return self.variance * np.minimum(s, t)
        r = np.abs(s - t) / self.lengthscale
        if fam == "squared_exponential":
            return self.variance * np.exp(-0.5 * r * r)
        if fam == "matern32":
            a = _SQRT3 * r
            return self.variance * (1.0 + a) * np.exp(-a)
        a = _SQRT5 * r
        return self.variance * (1.0 + a + a * a / 3.0) * np.exp(-a)

    def matrix(self, a, b=None):
        """Cross-covariance matrix ``(K(a_i, b_j))_{ij}``."""
        a = np.asarray(a, dtype=float).ravel()
        b = a if b is None else np.asarray(b, dtype=float).ravel()
        return self(a[:, None], b[None, :])


def eval_kernel(k: Kernel, s: float, t: float) -> float:
    """Scalar kernel evaluation; raises :class:`DomainError` outside [0, 1]."""
    return float(k(float(s), float(t)))


@dataclass(frozen=True)
class KernelSpan:
    """A finite kernel expansion ``h = sum_k alpha_k K(., s_k)``.

    These are the only elements of the RKHS whose norm is available in
    closed form, ``||h||^2 = alpha^T K(s, s) alpha``, which makes them the
    reference functions of the stability and convergence studies.
    """

    kernel: Kernel
    sites: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        sites = np.asarray(self.sites, dtype=float).ravel()
        alpha = np.asarray(self.alpha, dtype=float).ravel()
        if sites.shape != alpha.shape:
            raise ValueError("sites and alpha must have the same length")
        _check_unit_interval(sites)
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "alpha", alpha)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.kernel(x[..., None], self.sites) @ self.alpha

    @property
    def norm_sq(self) -> float:
        return float(self.alpha @ self.kernel.matrix(self.sites) @ self.alpha)


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """Kernel matrix on a node set together with its lower Cholesky factor.

    ``values`` already contains the diagonal jitter, so ``factor @ factor.T``
    reconstructs ``values`` and every downstream quadratic form is taken
    with respect to the same matrix.
    """

    nodes: np.ndarray
    values: np.ndarray
    factor: np.ndarray
    jitter_used: float = 0.0
    kernel: Kernel | None = field(default=None, compare=False)

    @property
    def size(self) -> int:
        return self.values.shape[0]


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def build_gram(k: Kernel, nodes) -> GramMatrix:
    """Assemble and factorize ``(K(t_i, t_j))`` on strictly increasing nodes.

    The jitter ladder in :data:`JITTER_LADDER` is climbed until Cholesky
    succeeds; the jitter actually applied (absolute) is recorded.

    Raises
    ------
    FactorizationError
        If even the largest jitter does not make the matrix factorizable.
    """
    nodes = np.asarray(nodes, dtype=float).ravel()
    if nodes.size == 0:
        raise ValueError("need at least one node")
    if np.any(np.diff(nodes) <= 0):
        raise ValueError("nodes must be strictly increasing")
    base = k.matrix(nodes)
    scale = float(np.max(np.abs(np.diag(base))))
    if scale == 0.0:
        scale = 1.0
    eye = np.eye(nodes.size)
    for rel in JITTER_LADDER:
        jitter = rel * scale
        values = base + jitter * eye if jitter else base
        try:
            factor = linalg.cholesky(values, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(factor)):
            continue
        return GramMatrix(
            nodes=_readonly(nodes),
            values=_readonly(values),
            factor=_readonly(factor),
            jitter_used=jitter,
            kernel=k,
        )
    raise FactorizationError(
        f"Gram matrix of {k.family} kernel on {nodes.size} nodes is not positive "
        f"definite even with jitter {JITTER_LADDER[-1]:g} x max diagonal"
    )


def gram_solve(g: GramMatrix, b):
    """Solve ``Gamma x = b`` through the stored Cholesky factor.

    ``b`` may be a vector or a matrix of right-hand sides (one per column).
    """
    b = np.asarray(b, dtype=float)
    if b.shape[0] != g.size:
        raise ValueError(f"right-hand side has {b.shape[0]} rows, Gram has {g.size}")
    return linalg.cho_solve((g.factor, True), b, check_finite=False)
