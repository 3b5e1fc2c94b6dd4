"""Invariant densities, resolvent solves, spectral diagnostics and oracles.

The production path is collocation of the pointwise transfer operator on a
grid, iterated to its fixed point. Two independent checks sit beside it: an
Ulam (interval Markov chain) discretisation built from exact interval
preimages, and Birkhoff averages along simulated orbits.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import ConvergenceError, DomainError, ResponseLabError
from .grid import GridDensity, _gauss_legendre, norm, refined_nodes, uniform_nodes
from .maps import MapFamily, branch_inverse
from .transfer import ly_constants, operator_for

MAX_POWER_ITER = 100_000
STALL_FRACTION = 1e-3


class ReducibleChainError(ResponseLabError):
    """The Ulam chain has more than one closed class."""


def make_grid(family: MapFamily, eps: float, grid_n: int, refine_near_ae: bool = False) -> np.ndarray:
    if grid_n < 128:
        raise DomainError(f"grid_n must be >= 128, got {grid_n}")
    if refine_near_ae:
        return refined_nodes(grid_n, family.a(eps))
    return uniform_nodes(grid_n)


def normalize(f: GridDensity) -> GridDensity:
    mass = f.integral()
    if mass == 0.0:
        raise ValueError("cannot normalise a density with zero integral")
    return f / mass


@dataclass
class InvariantDensity:
    density: GridDensity
    eps: float
    residual_l1: float
    iterations: int
    mass: float
    min_value: float


def solve_invariant_density(
    family: MapFamily,
    eps: float,
    grid_n: int = 2048,
    tol: float = 1e-10,
    init: GridDensity | None = None,
    refine_near_ae: bool = False,
    nodes: np.ndarray | None = None,
    max_iter: int = MAX_POWER_ITER,
) -> InvariantDensity:
    """Power iteration for the fixed point of ``L_eps``, renormalised every step.

    Stops when ``||L h - h||_1 <= tol`` for the normalised iterate ``h``.

    Raises
    ------
    ConvergenceError
        When ``max_iter`` iterations pass without reaching ``tol``, or the
        iterate stops moving while the residual stays above ``tol`` (the
        discrete leading eigenvalue is not 1 to within ``tol``, typical of
        coarse grids); the last residual is attached.
    """
    if tol < 1e-12:
        raise DomainError(f"tol must be >= 1e-12, got {tol}")
    eps = family.check_eps(eps)
    if nodes is None:
        nodes = init.nodes if init is not None else make_grid(family, eps, grid_n, refine_near_ae)
    op = operator_for(family, eps, nodes)
    h = normalize(init if init is not None else GridDensity(nodes, np.ones_like(nodes)))
    v = h.values
    residual = np.inf
    for it in range(1, max_iter + 1):
        w = op @ v
        residual = norm(h.with_values(w - v), "L1")
        if residual <= tol:
            break
        mass = h.with_values(w).integral()
        nxt = w / mass
        # iterate has settled on the discrete eigenvector; its eigenvalue misses 1 by the residual
        if norm(h.with_values(nxt - v), "L1") <= STALL_FRACTION * tol:
            raise ConvergenceError(
                f"residual floor {residual:.3e} above tol {tol:.1e}: discrete leading eigenvalue "
                f"{mass:.15f}; refine the grid", residual=residual, iterations=it)
        v = nxt
    else:
        raise ConvergenceError(
            f"power iteration stalled at residual {residual:.3e} after {max_iter} iterations",
            residual=residual, iterations=max_iter)
    dens = h.with_values(v)
    return InvariantDensity(dens, eps, float(residual), it, dens.integral(), float(v.min()))


def invariant_density(family: MapFamily, eps: float, grid_n: int = 2048, tol: float = 1e-10, **kw) -> GridDensity:
    return solve_invariant_density(family, eps, grid_n, tol, **kw).density


# -- Ulam oracle ----------------------------------------------------------------


@dataclass
class UlamResult:
    """Stationary histogram of the Ulam chain on ``bins`` equal intervals."""

    edges: np.ndarray
    heights: np.ndarray
    matrix: sp.csr_matrix
    method: str
    iterations: int

    @property
    def bins(self) -> int:
        return self.heights.size

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def mass_beyond(self, a: float) -> float:
        width = np.diff(self.edges)
        return float(np.sum((self.heights * width)[self.edges[:-1] >= a]))

    def l1_distance(self, f: GridDensity, points: int = 8) -> float:
        """``int |f - hist|`` with Gauss-Legendre points inside each bin."""
        t, w = _gauss_legendre(points)
        width = np.diff(self.edges)
        xq = (self.edges[:-1, None] + width[:, None] * t[None, :])
        vals = f(xq.ravel()).reshape(xq.shape)
        return float(np.sum(width[:, None] * w[None, :] * np.abs(vals - self.heights[:, None])))

    def l1_distance_to(self, other: "UlamResult") -> float:
        """L1 distance between two histograms whose edge sets nest."""
        fine, coarse = (self, other) if self.bins >= other.bins else (other, self)
        mids = 0.5 * (fine.edges[:-1] + fine.edges[1:])
        j = np.clip(np.searchsorted(coarse.edges, mids, side="right") - 1, 0, coarse.bins - 1)
        return float(np.sum(np.diff(fine.edges) * np.abs(fine.heights - coarse.heights[j])))


def _ulam_exact(family: MapFamily, eps: float, bins: int) -> sp.csr_matrix:
    edges = np.linspace(0.0, 1.0, bins + 1)
    a = family.a(eps)
    targets = edges[edges <= a]
    rows, cols, vals = [], [], []
    for branch in ("left", "right"):
        lo, hi = family.branch_domain(branch)
        pre = branch_inverse(family, branch, targets, eps)
        pts = np.unique(np.concatenate([edges[(edges >= lo) & (edges <= hi)], pre, [lo, hi]]))
        seg_len = np.diff(pts)
        mid = 0.5 * (pts[:-1] + pts[1:])
        keep = (seg_len > 0) & (mid != family.c)
        mid, seg_len = mid[keep], seg_len[keep]
        image = family._value(mid, eps)
        src = np.clip((mid * bins).astype(int), 0, bins - 1)
        dst = np.clip((image * bins).astype(int), 0, bins - 1)
        rows.append(src)
        cols.append(dst)
        vals.append(seg_len * bins)
    rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    return sp.csr_matrix((vals, (rows, cols)), shape=(bins, bins))


def _ulam_monte_carlo(family: MapFamily, eps: float, bins: int, mc_per_bin: int, seed: int) -> sp.csr_matrix:
    rng = np.random.default_rng(seed)
    src = np.repeat(np.arange(bins), mc_per_bin)
    x = (src + rng.random(src.size)) / bins
    x[x == family.c] = np.nextafter(family.c, 0.0)
    dst = np.clip((family._value(x, eps) * bins).astype(int), 0, bins - 1)
    vals = np.full(src.size, 1.0 / mc_per_bin)
    return sp.csr_matrix((vals, (src, dst)), shape=(bins, bins))


def _check_single_closed_class(P: sp.csr_matrix) -> None:
    n_comp, labels = connected_components(P, directed=True, connection="strong")
    if n_comp == 1:
        return
    coo = P.tocoo()
    leaving = labels[coo.row] != labels[coo.col]
    open_classes = np.unique(labels[coo.row[leaving & (coo.data > 0)]])
    closed = n_comp - open_classes.size
    if closed != 1:
        raise ReducibleChainError(f"Ulam chain has {closed} closed classes; stationary vector is not unique")


def ulam_oracle(
    family: MapFamily,
    eps: float,
    bins: int = 4096,
    mc_per_bin: int = 0,
    tol: float = 1e-14,
    max_iter: int = MAX_POWER_ITER,
    seed: int = 0,
) -> UlamResult:
    """Ulam discretisation ``P_ij = m(I_i & T^-1 I_j) / m(I_i)`` and its stationary histogram.

    Transition masses come from exact interval preimages of bin edges. If
    the branch inverse fails and ``mc_per_bin > 0``, sampled transition
    frequencies are used instead.
    """
    if bins < 256:
        raise DomainError(f"bins must be >= 256, got {bins}")
    eps = family.check_eps(eps)
    try:
        P = _ulam_exact(family, eps, bins)
        method = "exact"
    except ConvergenceError:
        if mc_per_bin <= 0:
            raise
        P = _ulam_monte_carlo(family, eps, bins, mc_per_bin, seed)
        method = "monte-carlo"
    _check_single_closed_class(P)
    PT = P.T.tocsr()
    p = np.full(bins, 1.0 / bins)
    for it in range(1, max_iter + 1):
        q = PT @ p
        q /= q.sum()
        if np.abs(q - p).sum() <= tol:
            p = q
            break
        p = q
    else:
        raise ConvergenceError("Ulam power iteration did not converge", residual=float(np.abs(q - p).sum()),
                               iterations=max_iter)
    edges = np.linspace(0.0, 1.0, bins + 1)
    return UlamResult(edges, p * bins, P, method, it)


# -- resolvent -------------------------------------------------------------------


@dataclass
class ResolventSolve:
    solution: GridDensity
    terms_used: int
    residual_l1: float
    q_mean: float
    residual_raw_l1: float = 0.0
    increments: list = field(default_factory=list, repr=False)


def resolvent_solve(
    family: MapFamily,
    eps: float,
    q: GridDensity,
    tol: float = 1e-12,
    h: GridDensity | None = None,
    max_terms: int = 10_000,
    mean_tol: float = 1e-8,
) -> ResolventSolve:
    """``(I - L_eps)^{-1} q`` on zero-mean functions by its Neumann series.

    Terms ``L^n q`` are summed until ``||L^n q||_1 <= tol ||q||_1``. The
    source is first projected onto the complement of ``h`` along the left
    Perron vector of the discrete operator, which the discrete ``L``
    preserves exactly, so no mean can leak back in through the eigenvalue
    at 1. ``residual_l1`` is measured against this projected source and
    ``residual_raw_l1`` against ``q`` as given; they differ by about
    ``|int q| ||h||_1``.

    Raises
    ------
    DomainError
        If ``|int q| > mean_tol``.
    ConvergenceError
        If the terms have not decayed after ``max_terms``.
    """
    eps = family.check_eps(eps)
    q_mean = q.integral()
    if abs(q_mean) > mean_tol:
        raise DomainError(f"resolvent needs a zero-mean source, got mean {q_mean:.3e}")
    qn = norm(q, "L1")
    if qn == 0.0:
        return ResolventSolve(q.with_values(np.zeros_like(q.values)), 1, 0.0, q_mean, 0.0, [0.0])
    op = operator_for(family, eps, q.nodes, q.interp_order)
    if h is None:
        h = invariant_density(family, eps, nodes=q.nodes)
    ell = left_perron_vector(op, h)
    hv = h.values

    def deflate(v):
        return v - np.dot(ell, v) * hv

    term = deflate(q.values)
    total = term.copy()
    increments = [norm(q.with_values(term), "L1")]
    for n in range(1, max_terms + 1):
        term = deflate(op @ term)
        inc = norm(q.with_values(term), "L1")
        increments.append(inc)
        if inc <= tol * qn:
            break
        total += term
    else:
        raise ConvergenceError(f"Neumann series did not decay below {tol:.1e} in {max_terms} terms",
                               residual=increments[-1] / qn, iterations=max_terms)
    phi = q.with_values(total)
    image = total - op @ total
    residual = norm(q.with_values(image - deflate(q.values)), "L1")
    raw = norm(q.with_values(image - q.values), "L1")
    return ResolventSolve(phi, n, residual, q_mean, raw, increments)


def left_perron_vector(op, h: GridDensity, tol: float = 1e-15, max_iter: int = MAX_POWER_ITER) -> np.ndarray:
    """Left fixed vector ``l`` of the collocation matrix with ``l . h = 1``.

    Starts from the quadrature weights of the interpolant integral, which
    it differs from only at discretisation level.
    """
    _, wq, mats = h.quadrature()
    ell = mats[0].T @ wq
    PT = op.matrix.T.tocsr()
    for _ in range(max_iter):
        nxt = PT @ ell
        nxt /= np.dot(nxt, h.values)
        if np.max(np.abs(nxt - ell)) <= tol * np.max(np.abs(nxt)):
            return nxt
        ell = nxt
    raise ConvergenceError("left Perron vector did not converge", iterations=max_iter)


# -- spectrum ----------------------------------------------------------------------


@dataclass
class SpectralDiagnostics:
    leading_eig: float
    subdominant_modulus: float
    lambda_ly: float
    m_ly: float
    ess_radius_bound: float
    n_isolated: int
    eigenvalues: np.ndarray = field(repr=False)

    def table(self, k: int = 20) -> list[dict]:
        ev = self.eigenvalues[:k]
        return [{"rank": i, "real": float(z.real), "imag": float(z.imag), "modulus": float(abs(z))}
                for i, z in enumerate(ev)]


def spectrum(family: MapFamily, eps: float = 0.0, grid_n: int = 1024, margin: float = 1e-6) -> SpectralDiagnostics:
    """Dense eigen-decomposition of the collocation matrix.

    ``n_isolated`` counts subdominant eigenvalues outside the disc of radius
    ``lambda + margin`` bounding the essential spectrum.
    """
    if grid_n > 4096:
        raise DomainError(f"grid_n must be <= 4096 for a dense eigendecomposition, got {grid_n}")
    eps = family.check_eps(eps)
    op = operator_for(family, eps, make_grid(family, eps, grid_n))
    try:
        ev = np.linalg.eigvals(op.dense())
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"eigensolver failed: {exc}") from exc
    ev = ev[np.lexsort((-ev.real, -np.abs(ev)))]
    lead = ev[0]
    sub = float(np.abs(ev[1])) if ev.size > 1 else 0.0
    ly = ly_constants(family, eps, max(grid_n, 256))
    n_iso = int(np.sum(np.abs(ev[1:]) > ly.lam + margin))
    return SpectralDiagnostics(float(lead.real), sub, ly.lam, ly.m, ly.lam, n_iso, ev)


# -- Birkhoff averages -------------------------------------------------------------

OBSERVABLES = {
    "one": lambda x: np.ones_like(x),
    "x": lambda x: x,
    "x2": lambda x: x * x,
    "cos2pix": lambda x: np.cos(2 * np.pi * x),
}
_OBS_CODES = {"one": 0, "x": 1, "x2": 2, "cos2pix": 3}
BURN_IN = 1000


def thread_cap() -> int | None:
    raw = os.environ.get("RESPONSE_LAB_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise DomainError(f"RESPONSE_LAB_THREADS must be an integer, got {raw!r}") from None
    return max(n, 1)


@dataclass
class BirkhoffResult:
    time_avg: float
    space_avg: float
    gap: float
    per_orbit: np.ndarray = field(repr=False)
    seed: int = 0
    orbit_len: int = 0
    n_orbits: int = 0
    cusp_hits: int = 0


def _orbit_sums_numpy(family, eps, starts, orbit_len, obs):
    x = starts.copy()
    hits = 0
    sums = np.zeros_like(x)
    for k in range(BURN_IN + orbit_len):
        at_c = x == family.c
        if at_c.any():
            hits += int(at_c.sum())
            x[at_c] += 1e-15
        x = family._value(x, eps)
        if k >= BURN_IN:
            sums += obs(x)
    return sums, hits


def birkhoff_check(
    family: MapFamily,
    eps: float,
    observable: str = "x",
    orbit_len: int = 100_000,
    n_orbits: int = 4,
    seed: int = 0,
    density: GridDensity | None = None,
    grid_n: int = 2048,
) -> BirkhoffResult:
    """Compare orbit time averages of an observable with its integral against ``h_eps``.

    Starts are uniform draws from a seeded PCG64 generator; each orbit
    discards ``BURN_IN`` steps. An orbit landing exactly on ``c`` is nudged
    by 1e-15.
    """
    if orbit_len < 100_000:
        raise DomainError(f"orbit_len must be >= 1e5, got {orbit_len}")
    if observable not in OBSERVABLES:
        raise DomainError(f"unknown observable {observable!r}; known: {sorted(OBSERVABLES)}")
    eps = family.check_eps(eps)
    rng = np.random.default_rng(seed)
    starts = rng.random(n_orbits)
    kernel = getattr(family, "orbit_kernel", None)
    if kernel is not None:
        from ._orbits import orbit_sums

        sums, hits = orbit_sums(kernel(), eps, starts, orbit_len, BURN_IN, _OBS_CODES[observable], family.c,
                                thread_cap())
    else:
        sums, hits = _orbit_sums_numpy(family, eps, starts, orbit_len, OBSERVABLES[observable])
    per_orbit = sums / orbit_len
    time_avg = float(np.mean(per_orbit))
    if density is None:
        density = invariant_density(family, eps, grid_n)
    xq, wq, mats = density.quadrature()
    space_avg = float(np.dot(wq, OBSERVABLES[observable](xq) * (mats[0] @ density.values)))
    return BirkhoffResult(time_avg, space_avg, abs(time_avg - space_avg), per_orbit, seed, orbit_len, n_orbits,
                          int(hits))
