"""Pointwise transfer operator of a cusp-map family and its derivative actions.

``(L f)(x) = sum_{T(y) = x} f(y) / |T'(y)|`` for ``x`` in ``[0, a_eps)`` and 0
beyond. Output is collocated on the nodes of the input grid, so for a fixed
grid the operator is a sparse square matrix acting on nodal values.

Derivative actions use the chain rule through the inverse branches:

    (L f)'  = L(f'/T') - L(T''/T'^2 f)
    (L f)'' = L(f''/T'^2) - L(3 T''/T'^3 f') - L((T'''/T'^3 - 3 T''^2/T'^4) f)

Both hold on increasing and decreasing branches alike.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .grid import GridDensity, basis_weights, graded_quadrature, norm
from .maps import MapFamily, branch_inverse

BRANCHES = ("left", "right")


@dataclass(frozen=True)
class OperatorWeights:
    """Weights multiplying ``f``, ``f'``, ``f''`` inside ``L`` at preimages ``y``.

    All entries take their (zero) cusp limit inside the cusp guard.
    ``w1 = T''/T'^2``; ``g1a = g1b = T''/T'^3``; ``g2 = T'''/T'^3``;
    ``g3 = 2 T''^2/T'^4``; ``g4 = T''^2/T'^4``.
    """

    y: np.ndarray
    w0: np.ndarray
    inv_d1: np.ndarray
    w1: np.ndarray
    g1a: np.ndarray
    g1b: np.ndarray
    g2: np.ndarray
    g3: np.ndarray
    g4: np.ndarray


def operator_weights(family: MapFamily, y, eps: float) -> OperatorWeights:
    y = np.asarray(y, dtype=float)
    d1, d2, d3, near = family.jet(y, eps)
    with np.errstate(invalid="ignore"):
        inv = 1.0 / d1
        w1 = d2 * inv * inv
        g1 = w1 * inv
        g2 = d3 * inv ** 3
        g4 = (d2 * d2) * inv ** 4
        parts = dict(w0=np.abs(inv), inv_d1=inv, w1=w1, g1a=g1, g1b=g1, g2=g2, g3=2.0 * g4, g4=g4)
    parts = {k: np.where(near, 0.0, v) for k, v in parts.items()}
    return OperatorWeights(y=y, **parts)


class PsiPair(NamedTuple):
    psi1: GridDensity
    psi2: GridDensity


class TransferOperator:
    """Collocated transfer operator for one ``(family, eps, grid)``.

    Preimages of every node in ``[0, a_eps)`` are found once per branch;
    the node ``x = a_eps`` itself maps to 0, its limit value.
    """

    def __init__(self, family: MapFamily, eps: float, nodes: np.ndarray, order: int = 3):
        self.family = family
        self.eps = family.check_eps(eps)
        self.nodes = np.asarray(nodes, dtype=float)
        self.order = order
        self.a = family.a(self.eps)
        self.active = np.flatnonzero(self.nodes < self.a)
        xs = self.nodes[self.active]
        self.branches = {}
        for b in BRANCHES:
            y = branch_inverse(family, b, xs, self.eps)
            self.branches[b] = operator_weights(family, y, self.eps)
        self._matrices = {}

    @property
    def size(self) -> int:
        return self.nodes.size

    def branch_matrix(self, branch: str) -> sp.csr_matrix:
        """Sparse matrix of the single-branch component (psi_1 or psi_2)."""
        if branch not in self._matrices:
            w = self.branches[branch]
            idx, bw = basis_weights(w.y, self.nodes, self.order)
            k = idx.shape[1]
            rows = np.repeat(self.active, k)
            vals = (bw * w.w0[:, None]).ravel()
            self._matrices[branch] = sp.csr_matrix((vals, (rows, idx.ravel())), shape=(self.size, self.size))
        return self._matrices[branch]

    @property
    def matrix(self) -> sp.csr_matrix:
        if "both" not in self._matrices:
            self._matrices["both"] = (self.branch_matrix("left") + self.branch_matrix("right")).tocsr()
        return self._matrices["both"]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, values):
        return self.matrix @ values

    def pointwise(self, func, branches=BRANCHES) -> np.ndarray:
        """Nodal values of ``sum_y w0(y) * func(y, weights)`` over chosen branches.

        ``func`` receives the preimages and their :class:`OperatorWeights`,
        which lets callers form ``L(g)`` for integrands known pointwise
        rather than only through a grid interpolant.
        """
        out = np.zeros(self.size)
        for b in branches:
            w = self.branches[b]
            live = w.w0 > 0
            vals = np.zeros_like(w.w0)
            vals[live] = w.w0[live] * func(w.y, w)[live]
            out[self.active] += vals
        return out


@lru_cache(maxsize=64)
def _cached_operator(family, eps, key, order):
    return TransferOperator(family, eps, np.frombuffer(key, dtype=float), order)


def operator_for(family: MapFamily, eps: float, nodes, order: int = 3) -> TransferOperator:
    nodes = np.ascontiguousarray(nodes, dtype=float)
    return _cached_operator(family, float(eps), nodes.tobytes(), order)


def apply(family: MapFamily, f: GridDensity, eps: float = 0.0) -> GridDensity:
    """``L_eps f`` on the grid of ``f``; exactly zero on ``[a_eps, 1]``."""
    op = operator_for(family, eps, f.nodes, f.interp_order)
    return f.with_values(op @ f.values)


def _derivative_values(f: GridDensity, f_prime, y, deriv):
    if f_prime is None:
        return f(y, deriv=deriv)
    if not f_prime.same_grid(f):
        raise ValueError("derivative grid does not match the density grid")
    return f_prime(y)


def apply_derivative(family: MapFamily, f: GridDensity, f_prime: GridDensity | None = None, eps: float = 0.0) -> GridDensity:
    """``(L_eps f)'`` from ``L(f'/T') - L(T''/T'^2 f)``.

    Without ``f_prime`` the derivative of the interpolant of ``f`` is used.
    """
    op = operator_for(family, eps, f.nodes, f.interp_order)

    def integrand(y, w):
        return w.inv_d1 * _derivative_values(f, f_prime, y, 1) - w.w1 * f(y)

    return f.with_values(op.pointwise(integrand))


def apply_second_derivative(
    family: MapFamily,
    f: GridDensity,
    f_prime: GridDensity | None = None,
    f_second: GridDensity | None = None,
    eps: float = 0.0,
) -> GridDensity:
    """``(L_eps f)''`` from the three-term weight decomposition."""
    op = operator_for(family, eps, f.nodes, f.interp_order)

    def integrand(y, w):
        fp = _derivative_values(f, f_prime, y, 1)
        fpp = _derivative_values(f, f_second, y, 2)
        return w.inv_d1 ** 2 * fpp - (2.0 * w.g1a + w.g1b) * fp - (w.g2 - w.g3 - w.g4) * f(y)

    return f.with_values(op.pointwise(integrand))


def psi_components(family: MapFamily, f: GridDensity, eps: float = 0.0) -> PsiPair:
    """Left- and right-branch contributions to ``L_eps f``."""
    op = operator_for(family, eps, f.nodes, f.interp_order)
    return PsiPair(
        f.with_values(op.branch_matrix("left") @ f.values),
        f.with_values(op.branch_matrix("right") @ f.values),
    )


class LYConstants(NamedTuple):
    """Lasota-Yorke constants.

    ``lam``, ``m`` bound ``||(Lf)'||_1 <= lam ||f'||_1 + m ||f||_2``;
    ``lam2``, ``m_w21`` bound ``||Lf||_W21 <= lam2 ||f||_W21 + m_w21 ||f||_W11``.
    ``sup_g1`` and ``l2_g234`` are the weight norms entering the second
    derivative estimate.
    """

    lam: float
    m: float
    lam2: float
    m_w21: float
    sup_g1: float
    l2_g234: float


def _weight_l2(family: MapFamily, eps: float, func, n_outer: int) -> float:
    xq, wq = graded_quadrature(family.c, n_outer=n_outer)
    w = operator_weights(family, xq, eps)
    return float(np.sqrt(np.dot(wq, func(w) ** 2)))


def ly_constants(family: MapFamily, eps: float = 0.0, grid_size: int = 4096) -> LYConstants:
    """Estimate Lasota-Yorke constants on a grid plus a cusp-graded quadrature."""
    if grid_size < 256:
        raise ValueError(f"grid_size must be >= 256, got {grid_size}")
    eps = family.check_eps(eps)
    x = np.linspace(0.0, 1.0, grid_size + 1)
    x = x[x != family.c]
    xq, _ = graded_quadrature(family.c, n_outer=grid_size)
    probe = np.concatenate([x, xq])
    w = operator_weights(family, probe, eps)
    lam = float(np.max(w.w0))
    m = _weight_l2(family, eps, lambda w: w.w1, grid_size)
    sup_g1 = float(np.max(np.abs(2.0 * w.g1a + w.g1b)))
    l2_g = _weight_l2(family, eps, lambda w: w.g2 - w.g3 - w.g4, grid_size)
    m_w21 = max(1.0, lam + sup_g1) + m + l2_g
    return LYConstants(lam, m, lam * lam, m_w21, sup_g1, l2_g)


def l2_bound_check(family: MapFamily, eps: float, test_set) -> float:
    """Largest ``||L f||_2 / ||f||_2`` over the test densities."""
    ratios = []
    for f in test_set:
        nf = norm(f, "L2")
        if nf == 0.0:
            raise ValueError("test densities must be nonzero")
        ratios.append(norm(apply(family, f, eps), "L2") / nf)
    return float(max(ratios))


def apply_at(family: MapFamily, func, x, eps: float = 0.0) -> np.ndarray:
    """``L_eps g`` at arbitrary points for a callable ``g``, bypassing any grid."""
    eps = family.check_eps(eps)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros_like(x)
    act = x < family.a(eps)
    for b in BRANCHES:
        w = operator_weights(family, branch_inverse(family, b, x[act], eps), eps)
        live = w.w0 > 0
        vals = np.zeros_like(w.w0)
        vals[live] = w.w0[live] * np.asarray(func(w.y))[live]
        out[act] += vals
    return out


def psi_gaps(family: MapFamily, f: GridDensity, eps_list) -> np.ndarray:
    """``||psi_{j,eps} - psi_{j,0}||_2`` for each ``eps``; shape ``(len(eps_list), 2)``."""
    base = psi_components(family, f, 0.0)
    out = []
    for e in eps_list:
        p = psi_components(family, f, e)
        out.append([norm(p.psi1 - base.psi1, "L2"), norm(p.psi2 - base.psi2, "L2")])
    return np.array(out, dtype=float).reshape(len(out), 2)
