"""Grid functions on [0, 1] with local Lagrange interpolation and quadrature."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

GL_POINTS = 8


def uniform_nodes(n: int) -> np.ndarray:
    """Return ``n + 1`` equispaced nodes on [0, 1]."""
    if n < 4:
        raise ValueError(f"need at least 4 cells, got {n}")
    return np.linspace(0.0, 1.0, n + 1)


def refined_nodes(n: int, center: float, width: float = 0.05) -> np.ndarray:
    """Uniform nodes with the mesh halved inside ``[center - width, center + width]``."""
    base = uniform_nodes(n)
    mids = 0.5 * (base[:-1] + base[1:])
    keep = np.abs(mids - center) <= width
    return np.sort(np.concatenate([base, mids[keep]]))


def _stencil(x: np.ndarray, nodes: np.ndarray, order: int, cell=None) -> tuple[np.ndarray, np.ndarray]:
    """Cell index of each query point and the first node of its stencil."""
    n = nodes.size - 1
    if cell is None:
        cell = np.searchsorted(nodes, x, side="right") - 1
    cell = np.clip(cell, 0, n - 1)
    if order == 1:
        return cell, cell
    first = np.clip(cell - 1, 0, n - 3)
    return cell, first


def basis_weights(x, nodes: np.ndarray, order: int = 3, deriv: int = 0, cell=None):
    """Local Lagrange basis weights at query points.

    Parameters
    ----------
    x : array_like
        Query points in [0, 1].
    nodes : ndarray
        Strictly increasing nodes, first 0 and last 1.
    order : {1, 3}
        Polynomial degree of the local interpolant (2 or 4 point stencil).
    deriv : {0, 1, 2}
        Derivative of the interpolant to evaluate.
    cell : ndarray of int, optional
        Force the cell whose polynomial is used (one-sided values at nodes).

    Returns
    -------
    idx, w : ndarray of shape (m, order + 1)
        Node indices and weights so that ``p(x_k) = sum_j w[k, j] * f[idx[k, j]]``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _, first = _stencil(x, nodes, order, cell)
    k = order + 1
    idx = first[:, None] + np.arange(k)[None, :]
    xs = nodes[idx]
    d = x[:, None] - xs
    w = np.empty_like(xs)
    for j in range(k):
        others = [m for m in range(k) if m != j]
        denom = np.prod([xs[:, j] - xs[:, m] for m in others], axis=0)
        factors = [d[:, m] for m in others]
        if deriv == 0:
            num = np.prod(factors, axis=0)
        elif deriv == 1:
            num = np.zeros_like(x)
            for skip in range(len(factors)):
                num = num + np.prod([f for i, f in enumerate(factors) if i != skip] or [np.ones_like(x)], axis=0)
        elif deriv == 2:
            num = np.zeros_like(x)
            if len(factors) == 3:
                num = 2.0 * (factors[0] + factors[1] + factors[2])
        else:
            raise ValueError(f"deriv must be 0, 1 or 2, got {deriv}")
        w[:, j] = num / denom
    return idx, w


def interpolation_matrix(x, nodes: np.ndarray, order: int = 3, deriv: int = 0) -> sp.csr_matrix:
    """Sparse matrix mapping nodal values to interpolant values at ``x``."""
    idx, w = basis_weights(x, nodes, order, deriv)
    m, k = idx.shape
    rows = np.repeat(np.arange(m), k)
    return sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(m, nodes.size))


@lru_cache(maxsize=None)
def _gauss_legendre(points: int) -> tuple[np.ndarray, np.ndarray]:
    t, w = np.polynomial.legendre.leggauss(points)
    return 0.5 * (t + 1.0), 0.5 * w


def cell_quadrature(nodes: np.ndarray, points: int = GL_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre abscissae and weights over the grid cells."""
    t, w = _gauss_legendre(points)
    h = np.diff(nodes)
    xq = (nodes[:-1, None] + h[:, None] * t[None, :]).ravel()
    wq = (h[:, None] * w[None, :]).ravel()
    return xq, wq


def graded_quadrature(
    center: float,
    radius: float = 1e-2,
    levels: int = 40,
    ratio: float = 0.5,
    n_outer: int = 256,
    points: int = GL_POINTS,
) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0, 1] with geometric grading towards ``center``.

    Cells shrink by ``ratio`` over ``levels`` levels inside ``radius`` of
    ``center`` on both sides, which resolves integrable power singularities
    at ``center`` without a change of variables. The innermost gap of width
    ``radius * ratio**levels`` on each side of ``center`` is left out.
    """
    grading = radius * ratio ** np.arange(levels + 1)
    left = np.concatenate([np.linspace(0.0, center - radius, n_outer + 1)[:-1], center - grading])
    right = np.concatenate([center + grading[::-1], np.linspace(center + radius, 1.0, n_outer + 1)[1:]])
    t, w = _gauss_legendre(points)
    xs, ws = [], []
    for edges in (np.sort(left), right):
        edges = edges[(edges >= 0.0) & (edges <= 1.0)]
        h = np.diff(edges)
        xs.append((edges[:-1, None] + h[:, None] * t[None, :]).ravel())
        ws.append((h[:, None] * w[None, :]).ravel())
    return np.concatenate(xs), np.concatenate(ws)


@lru_cache(maxsize=32)
def _quadrature_operators(key: bytes, order: int):
    nodes = np.frombuffer(key, dtype=float)
    xq, wq = cell_quadrature(nodes)
    mats = tuple(interpolation_matrix(xq, nodes, order, d) for d in range(3))
    return xq, wq, mats


@dataclass(frozen=True, eq=False)
class GridDensity:
    """A function on [0, 1] given by nodal values and a local interpolation rule.

    ``interp_order`` 3 uses a 4-point Lagrange stencil per cell, 1 is piecewise
    linear. Derivatives of the interpolant stand in for ``f'`` and ``f''``.
    """

    nodes: np.ndarray
    values: np.ndarray
    interp_order: int = 3
    _key: bytes = field(init=False, repr=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if nodes.ndim != 1 or nodes.size < 5:
            raise ValueError("nodes must be a 1-d array with at least 5 entries")
        if nodes[0] != 0.0 or nodes[-1] != 1.0 or np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must increase strictly from 0 to 1")
        if values.shape != nodes.shape:
            raise ValueError(f"values shape {values.shape} does not match nodes {nodes.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        if self.interp_order not in (1, 3):
            raise ValueError(f"interp_order must be 1 or 3, got {self.interp_order}")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_key", nodes.tobytes())

    @classmethod
    def from_function(cls, func, nodes, interp_order: int = 3) -> "GridDensity":
        nodes = np.asarray(nodes, dtype=float)
        return cls(nodes, np.asarray(func(nodes), dtype=float) * np.ones_like(nodes), interp_order)

    @property
    def n(self) -> int:
        return self.nodes.size - 1

    def with_values(self, values) -> "GridDensity":
        return GridDensity(self.nodes, values, self.interp_order)

    def same_grid(self, other: "GridDensity") -> bool:
        return self.nodes.shape == other.nodes.shape and np.array_equal(self.nodes, other.nodes)

    def __call__(self, x, deriv: int = 0) -> np.ndarray:
        """Evaluate the interpolant (or its derivative) at ``x``."""
        x = np.asarray(x, dtype=float)
        idx, w = basis_weights(x.ravel(), self.nodes, self.interp_order, deriv)
        return np.sum(w * self.values[idx], axis=1).reshape(x.shape)

    def derivative(self, deriv: int = 1) -> "GridDensity":
        """Nodal values of the interpolant derivative, averaged from both sides at nodes."""
        left = self._one_sided(deriv, -1)
        right = self._one_sided(deriv, +1)
        return self.with_values(0.5 * (left + right))

    def _one_sided(self, deriv: int, side: int) -> np.ndarray:
        cells = np.arange(self.nodes.size) + (-1 if side < 0 else 0)
        idx, w = basis_weights(self.nodes, self.nodes, self.interp_order, deriv, cell=cells)
        return np.sum(w * self.values[idx], axis=1)

    def quadrature(self):
        """Gauss-Legendre points, weights and value/derivative matrices for this grid."""
        return _quadrature_operators(self._key, self.interp_order)

    def integral(self) -> float:
        _, wq, mats = self.quadrature()
        return float(np.dot(wq, mats[0] @ self.values))

    def sample_quadrature(self, deriv: int = 0) -> np.ndarray:
        _, _, mats = self.quadrature()
        return mats[deriv] @ self.values

    def __add__(self, other):
        if isinstance(other, GridDensity):
            _check_grid(self, other)
            return self.with_values(self.values + other.values)
        return self.with_values(self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridDensity):
            _check_grid(self, other)
            return self.with_values(self.values - other.values)
        return self.with_values(self.values - other)

    def __mul__(self, scalar):
        return self.with_values(self.values * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self.with_values(self.values / scalar)

    def __neg__(self):
        return self.with_values(-self.values)


def _check_grid(a: GridDensity, b: GridDensity) -> None:
    if not a.same_grid(b):
        raise ValueError("grid densities live on different grids")


def norm(f: GridDensity, kind: str = "L1") -> float:
    """Quadrature norm of the interpolant.

    ``W11`` and ``W21`` sum the L1 norms of the interpolant and its first
    (and second) derivatives.
    """
    kind = kind.upper()
    _, wq, mats = f.quadrature()
    if kind == "L1":
        return float(np.dot(wq, np.abs(mats[0] @ f.values)))
    if kind == "L2":
        return float(np.sqrt(np.dot(wq, (mats[0] @ f.values) ** 2)))
    if kind in ("W11", "W21"):
        top = 1 if kind == "W11" else 2
        return float(sum(np.dot(wq, np.abs(mats[d] @ f.values)) for d in range(top + 1)))
    if kind == "LINF":
        return float(max(np.max(np.abs(mats[0] @ f.values)), np.max(np.abs(f.values))))
    raise ValueError(f"unknown norm kind {kind!r}")
