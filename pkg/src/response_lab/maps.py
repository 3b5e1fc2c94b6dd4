"""Parametrised cusp-map families, branch inverses and the assumption audit.

A family is a one-parameter set of unimodal maps ``T_eps`` on [0, 1] with a
turning point ``c`` where ``|T'|`` blows up like ``|x - c|**beta``.
Families supply values and analytic derivatives; everything downstream
(transfer operators, response coefficients) is built on top of them.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConvergenceError, CuspProximityError, DomainError, NoPreimageError

CUSP_GUARD = 1e-15

_REGISTRY: dict[str, type] = {}
_INSTANCES: dict[str, "MapFamily"] = {}


def register_family(name: str):
    """Class decorator adding a family to the by-name registry."""

    def deco(cls):
        cls.name = name
        _REGISTRY[name] = cls
        return cls

    return deco


def get_family(name: str) -> "MapFamily":
    if name not in _REGISTRY:
        raise DomainError(f"unknown family {name!r}; known: {sorted(_REGISTRY)}")
    if name not in _INSTANCES:
        _INSTANCES[name] = _REGISTRY[name]()
    return _INSTANCES[name]


def available_families() -> list[str]:
    return sorted(_REGISTRY)


class MapFamily(ABC):
    """Contract for a cusp-map family ``T_eps``, ``eps`` in ``[0, eps_max)``.

    Subclasses implement the underscored methods on arrays without any
    argument checking; the public methods validate and dispatch.
    """

    name = "unnamed"
    c: float
    beta: float
    eps_max: float

    @abstractmethod
    def a(self, eps: float) -> float:
        """Image of the turning point, ``lim_{x -> c} T_eps(x)``."""

    @abstractmethod
    def _value(self, x, eps): ...

    @abstractmethod
    def _d1(self, x, eps): ...

    @abstractmethod
    def _d2(self, x, eps): ...

    @abstractmethod
    def _d3(self, x, eps): ...

    @abstractmethod
    def _deps(self, x, eps): ...

    @abstractmethod
    def _deps_d1(self, x, eps): ...

    # -- validation -------------------------------------------------------
    def check_eps(self, eps: float) -> float:
        eps = float(eps)
        if not (0.0 <= eps < self.eps_max):
            raise DomainError(f"epsilon={eps} outside [0, {self.eps_max}) for family {self.name!r}")
        return eps

    def _check_x(self, x, guard: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any((x < 0.0) | (x > 1.0)) or not np.all(np.isfinite(x)):
            raise DomainError("x must lie in [0, 1]")
        if np.any(x == self.c):
            raise DomainError(f"x = c = {self.c} is the turning point and is excluded")
        if guard > 0.0 and np.any(np.abs(x - self.c) < guard):
            raise CuspProximityError(f"|x - c| < {guard}: derivatives diverge at the cusp")
        return x

    def _out(self, x, res):
        return float(res) if np.ndim(x) == 0 else res

    # -- public evaluation --------------------------------------------------
    def value(self, x, eps: float = 0.0):
        eps = self.check_eps(eps)
        xa = self._check_x(x)
        return self._out(x, self._value(xa, eps))

    def d1(self, x, eps: float = 0.0):
        eps = self.check_eps(eps)
        return self._out(x, self._d1(self._check_x(x, CUSP_GUARD), eps))

    def d2(self, x, eps: float = 0.0):
        eps = self.check_eps(eps)
        return self._out(x, self._d2(self._check_x(x, CUSP_GUARD), eps))

    def d3(self, x, eps: float = 0.0):
        eps = self.check_eps(eps)
        return self._out(x, self._d3(self._check_x(x, CUSP_GUARD), eps))

    def deps(self, x, eps: float = 0.0):
        eps = self.check_eps(eps)
        return self._out(x, self._deps(self._check_x(x), eps))

    def deps_d1(self, x, eps: float = 0.0):
        eps = self.check_eps(eps)
        return self._out(x, self._deps_d1(self._check_x(x, CUSP_GUARD), eps))

    def inverse_slope(self, x, eps: float = 0.0):
        """``1 / |T'(x)|``, equal to its limit 0 inside the cusp guard."""
        eps = self.check_eps(eps)
        xa = self._check_x(x)
        near = np.abs(xa - self.c) < CUSP_GUARD
        safe = np.where(near, 0.0, xa)
        res = np.where(near, 0.0, 1.0 / np.abs(self._d1(safe, eps)))
        return self._out(x, res)

    def jet(self, y: np.ndarray, eps: float):
        """Unchecked ``(T', T'', T''')`` at ``y`` plus a mask of points inside the cusp guard.

        Guarded entries hold NaN; callers replace whatever they build from
        them with the (vanishing) cusp limit.
        """
        y = np.asarray(y, dtype=float)
        near = np.abs(y - self.c) < CUSP_GUARD
        safe = np.where(near, 0.0 if self.c > 0.5 else 1.0, y)
        d1, d2, d3 = self._d1(safe, eps), self._d2(safe, eps), self._d3(safe, eps)
        nan = np.nan
        return np.where(near, nan, d1), np.where(near, nan, d2), np.where(near, nan, d3), near

    def branch_domain(self, branch: str) -> tuple[float, float]:
        if branch == "left":
            return 0.0, self.c
        if branch == "right":
            return self.c, 1.0
        raise DomainError(f"branch must be 'left' or 'right', got {branch!r}")


@register_family("cusp-tent-example")
class CuspTentExample(MapFamily):
    """``T_eps = (1 - eps) S`` with the eighth-root cusp at ``c = 1/2``.

    ``S(x) = 3/4 (2x) + 1/4 (1 - (1 - 2x)**(1/8))`` on the left branch and its
    mirror image ``S(1 - x)`` on the right, so ``a(eps) = 1 - eps`` and
    ``|T'| >= (1 - eps) 25/16``.
    """

    c = 0.5
    beta = -7.0 / 8.0
    eps_max = 0.1

    def a(self, eps: float) -> float:
        return 1.0 - eps

    @staticmethod
    def _parts(x):
        left = x < 0.5
        u = np.where(left, 1.0 - 2.0 * x, 2.0 * x - 1.0)
        sgn = np.where(left, 1.0, -1.0)
        return left, u, sgn

    def _s(self, x):
        left, u, _ = self._parts(x)
        lin = np.where(left, 1.5 * x, 1.5 * (1.0 - x))
        return lin + 0.25 * (1.0 - u ** 0.125)

    def _s1(self, x):
        _, u, sgn = self._parts(x)
        return sgn * (1.5 + u ** -0.875 / 16.0)

    def _value(self, x, eps):
        return (1.0 - eps) * self._s(x)

    def _d1(self, x, eps):
        return (1.0 - eps) * self._s1(x)

    def _d2(self, x, eps):
        _, u, _ = self._parts(x)
        return (1.0 - eps) * (7.0 / 64.0) * u ** -1.875

    def _d3(self, x, eps):
        _, u, sgn = self._parts(x)
        return (1.0 - eps) * sgn * (105.0 / 256.0) * u ** -2.875

    def _deps(self, x, eps):
        return -self._s(x)

    def orbit_kernel(self):
        from ._orbits import cusp_tent_step

        return cusp_tent_step

    def _deps_d1(self, x, eps):
        return -self._s1(x)


@register_family("tent")
class TentFamily(MapFamily):
    """``(1 - eps) min(2x, 2 - 2x)``: bounded slopes, no cusp.

    Serves as a negative control; it violates the divergence assumptions.
    """

    c = 0.5
    beta = 0.0
    eps_max = 0.1

    def a(self, eps: float) -> float:
        return 1.0 - eps

    def _value(self, x, eps):
        return (1.0 - eps) * np.minimum(2.0 * x, 2.0 - 2.0 * x)

    def _d1(self, x, eps):
        return (1.0 - eps) * np.where(x < 0.5, 2.0, -2.0)

    def _d2(self, x, eps):
        return np.zeros_like(np.asarray(x, dtype=float))

    def _d3(self, x, eps):
        return np.zeros_like(np.asarray(x, dtype=float))

    def _deps(self, x, eps):
        return -np.minimum(2.0 * x, 2.0 - 2.0 * x)

    def orbit_kernel(self):
        from ._orbits import tent_step

        return tent_step

    def _deps_d1(self, x, eps):
        return np.where(x < 0.5, -2.0, 2.0)


# -- operations ---------------------------------------------------------------


def evaluate(family: MapFamily, x, eps: float = 0.0):
    """``T_eps(x)``; the turning point itself is rejected."""
    return family.value(x, eps)


def derivatives(family: MapFamily, x, eps: float, order: int):
    """``d^order T_eps / dx^order`` at ``x`` for ``order`` in 1, 2, 3."""
    if order not in (1, 2, 3):
        raise DomainError(f"order must be 1, 2 or 3, got {order}")
    return (family.d1, family.d2, family.d3)[order - 1](x, eps)


def perturbation_derivs(family: MapFamily, x, eps: float = 0.0):
    """``(dT/deps, dT'/deps)`` at ``x``."""
    return family.deps(x, eps), family.deps_d1(x, eps)


def branch_inverse(family: MapFamily, branch: str, x, eps: float = 0.0, tol: float = 1e-14, max_iter: int = 200):
    """Preimage of ``x`` on one monotone branch.

    Safeguarded Newton iteration inside a bisection bracket. Iteration stops
    once ``|T(y) - x| <= tol`` or the bracket has shrunk to adjacent floats,
    which happens next to the cusp where ``T`` jumps between consecutive
    representable ``y``.

    Raises
    ------
    NoPreimageError
        If ``x`` lies outside ``[0, a(eps)]``.
    ConvergenceError
        If neither stopping rule is met within ``max_iter`` iterations.
    """
    eps = family.check_eps(eps)
    lo0, hi0 = family.branch_domain(branch)
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    a = family.a(eps)
    if np.any(xa < 0.0) or np.any(xa > a) or not np.all(np.isfinite(xa)):
        raise NoPreimageError(f"points outside [0, a(eps)] = [0, {a}] have no preimage on the {branch} branch")
    sgn = 1.0 if branch == "left" else -1.0
    endpoint = lo0 if branch == "left" else hi0
    lo = np.full_like(xa, lo0)
    hi = np.full_like(xa, hi0)
    y = 0.5 * (lo + hi)
    done = xa == 0.0
    y[done] = endpoint
    resid = np.zeros_like(xa)
    for _ in range(max_iter):
        act = ~done
        if not np.any(act):
            break
        ya, xs = y[act], xa[act]
        fy = family._value(ya, eps) - xs
        resid[act] = fy
        conv = np.abs(fy) <= tol
        upper = sgn * fy > 0
        hia = np.where(upper, ya, hi[act])
        loa = np.where(upper, lo[act], ya)
        slope = family._d1(ya, eps)
        with np.errstate(divide="ignore", invalid="ignore"):
            yn = ya - fy / slope
        mid = 0.5 * (loa + hia)
        bad = ~np.isfinite(yn) | (yn <= loa) | (yn >= hia)
        yn = np.where(bad, mid, yn)
        collapsed = (np.nextafter(loa, hia) >= hia) | (yn == loa) | (yn == hia)
        fin = conv | collapsed
        yn = np.where(fin, ya, yn)
        hi[act], lo[act], y[act] = hia, loa, yn
        idx = np.flatnonzero(act)
        done[idx[fin]] = True
    if not np.all(done):
        worst = float(np.max(np.abs(resid[~done])))
        raise ConvergenceError(f"branch inverse did not converge in {max_iter} iterations", residual=worst, iterations=max_iter)
    return float(y[0]) if np.ndim(x) == 0 else y


# -- assumption audit ----------------------------------------------------------

ASSUMPTION_IDS = tuple(f"A{i}" for i in range(1, 10))


@dataclass
class AuditEntry:
    id: str
    status: str
    measured: dict = field(default_factory=dict)
    diagnostic: str = ""


@dataclass
class AssumptionAudit:
    family: str
    grid_size: int
    eps_samples: list
    entries: list

    def __getitem__(self, key: str) -> AuditEntry:
        for e in self.entries:
            if e.id == key:
                return e
        raise KeyError(key)

    @property
    def passed(self) -> bool:
        return all(e.status != "fail" for e in self.entries)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "grid_size": self.grid_size,
            "eps_samples": list(self.eps_samples),
            "passed": self.passed,
            "entries": [asdict(e) for e in self.entries],
        }


FIT_WINDOW = (1e-8, 1e-3)


def _cusp_offsets(n: int) -> np.ndarray:
    return np.geomspace(FIT_WINDOW[0], FIT_WINDOW[1], n)


def _loglog_fit(d: np.ndarray, g: np.ndarray):
    ok = np.isfinite(g) & (g > 0)
    if ok.sum() < 8:
        return None
    slope, intercept = np.polyfit(np.log(d[ok]), np.log(g[ok]), 1)
    return float(slope), float(np.exp(intercept))


def _audit_points(family: MapFamily, grid_size: int) -> np.ndarray:
    x = np.linspace(0.0, 1.0, grid_size + 1)
    return x[np.abs(x - family.c) >= CUSP_GUARD]


def audit_assumptions(family: MapFamily, grid_size: int = 4096, eps_samples=(0.0,)) -> AssumptionAudit:
    """Numerically check the standing assumptions on a sampled grid.

    Smoothness (A3) and topological mixing (A5) are reported as
    ``not-checkable``. Cusp exponents come from least-squares slopes of
    ``log |T^(k)|`` against ``log |x - c|`` on a geometric probe set in
    ``|x - c| in [1e-8, 1e-3]``.
    """
    if grid_size < 64:
        raise DomainError(f"grid_size must be >= 64, got {grid_size}")
    eps_samples = [family.check_eps(e) for e in eps_samples]
    if not eps_samples:
        raise DomainError("need at least one epsilon sample")
    c = family.c
    x = _audit_points(family, grid_size)
    left, right = x[x < c], x[x > c]
    d = _cusp_offsets(max(grid_size // 64, 16))
    near = np.concatenate([c - d, c + d])
    entries: list[AuditEntry] = []

    # A1: strict monotonicity per branch, both by values and by slope sign
    ok1 = True
    for e in eps_samples:
        tl, tr = family._value(left, e), family._value(right, e)
        s_l, s_r = family._d1(left, e), family._d1(right, e)
        ok1 &= bool(np.all(np.diff(tl) > 0) and np.all(np.diff(tr) < 0) and np.all(s_l > 0) and np.all(s_r < 0))
    entries.append(AuditEntry("A1", "pass" if ok1 else "fail", {}, "" if ok1 else "a branch is not strictly monotone"))

    # A2: zero endpoints; branch values approach a(eps) from below near c
    end_err, approach_ok = 0.0, True
    for e in eps_samples:
        end_err = max(end_err, abs(family._value(np.array(0.0), e)), abs(family._value(np.array(1.0), e)))
        dd = np.geomspace(1e-3, 1e-12, 10)
        for side in (-1.0, 1.0):
            gap = family.a(e) - family._value(c + side * dd, e)
            approach_ok &= bool(np.all(gap >= -1e-14) and np.all(np.diff(gap) <= 1e-15))
    ok2 = end_err <= 1e-14 and approach_ok
    entries.append(AuditEntry("A2", "pass" if ok2 else "fail", {"endpoint_error": float(end_err)},
                              "" if ok2 else "endpoint or turning-value condition violated"))

    entries.append(AuditEntry("A3", "not-checkable", {}, "C^3 smoothness is asserted by the family"))

    # A4: uniform expansion
    theta = min(float(np.min(np.abs(family._d1(x, e)))) for e in eps_samples)
    theta_near = min(float(np.min(np.abs(family._d1(near, e)))) for e in eps_samples)
    theta = min(theta, theta_near)
    ok4 = theta > 1.0
    entries.append(AuditEntry("A4", "pass" if ok4 else "fail", {"theta_est": theta},
                              "" if ok4 else f"min |T'| = {theta} <= 1"))

    entries.append(AuditEntry("A5", "not-checkable", {}, "topological mixing is asserted by the family"))

    # A6/A7: power-law divergence at the cusp
    fits = {1: [], 2: [], 3: []}
    derivs = {1: family._d1, 2: family._d2, 3: family._d3}
    for e in eps_samples:
        for side in (-1.0, 1.0):
            for k in (1, 2, 3):
                g = np.abs(derivs[k](c + side * d, e))
                fits[k].append(_loglog_fit(d, g))
    if any(f is None for f in fits[1]):
        entries.append(AuditEntry("A6", "fail", {}, "degenerate fit: fewer than 8 usable points near c"))
        beta_est = None
    else:
        slopes = [f[0] for f in fits[1]]
        beta_est = float(np.mean(slopes))
        c1 = [float(np.abs(family._d1(c + s * d[:3], e)).mean() / np.mean(d[:3] ** beta_est))
              for e in eps_samples for s in (-1.0, 1.0)]
        diverges = all(abs(family._d1(np.array(c - 1e-10), e)) > 10 * abs(family._d1(np.array(c - 1e-3), e))
                       for e in eps_samples)
        ok6 = diverges and -1.0 < beta_est < -0.75 and max(slopes) - min(slopes) < 0.02
        diag = "" if ok6 else (
            "|T'| stays bounded at c" if not diverges else f"fitted exponent {beta_est:.4f} outside (-1, -3/4)")
        entries.append(AuditEntry("A6", "pass" if ok6 else "fail",
                                  {"beta_est": beta_est, "C1_est": float(np.mean(c1))}, diag))

    ok7, meas7, diag7 = True, {}, ""
    ref = beta_est if beta_est is not None else family.beta
    for k, name in ((2, "C2_est"), (3, "C3_est")):
        if any(f is None for f in fits[k]):
            ok7, diag7 = False, f"degenerate fit for derivative {k}: fewer than 8 usable points near c"
            continue
        slope = float(np.mean([f[0] for f in fits[k]]))
        meas7[f"slope_d{k}"] = slope
        meas7[name] = float(np.mean([f[1] for f in fits[k]]))
        if abs(slope - (ref - (k - 1))) > 0.05:
            ok7, diag7 = False, f"derivative {k} exponent {slope:.4f} differs from beta - {k - 1}"
    entries.append(AuditEntry("A7", "pass" if ok7 else "fail", meas7, diag7))

    # A8: uniform power-law bounds over the eps samples
    pts = np.concatenate([x, near])
    off = np.abs(pts - c)
    beta = family.beta
    sups = []
    for i in range(3):
        vals = [np.abs(derivs[i + 1](pts, e)) / off ** (beta - i) for e in eps_samples]
        sups.append(float(np.max(vals)))
    inf1 = float(min(np.min(np.abs(family._d1(pts, e)) / off ** beta) for e in eps_samples))
    ok8 = all(np.isfinite(sups)) and inf1 > 0 and _a6_passed(entries)
    entries.append(AuditEntry("A8", "pass" if ok8 else "fail",
                              {"a8_sup_d1": sups[0], "a8_sup_d2": sups[1], "a8_sup_d3": sups[2],
                               "a8_sup": max(sups), "a8_inf": inf1},
                              "" if ok8 else "power-law bounds not uniform"))

    # A9: L2 continuity of the branch components at eps = 0
    entries.append(_audit_psi(family, grid_size, eps_samples))
    return AssumptionAudit(family.name, grid_size, list(eps_samples), entries)


def _a6_passed(entries) -> bool:
    for e in entries:
        if e.id == "A6":
            return e.status == "pass"
    return False


def _audit_psi(family: MapFamily, grid_size: int, eps_samples) -> AuditEntry:
    from .grid import GridDensity, uniform_nodes
    from .transfer import psi_gaps

    nodes = uniform_nodes(grid_size)
    f = GridDensity(nodes, 1.0 + 0.5 * np.cos(2 * np.pi * nodes))
    eps_pos = sorted((e for e in eps_samples if e > 0), reverse=True)
    if not eps_pos:
        return AuditEntry("A9", "not-checkable", {}, "needs a positive epsilon sample")
    gaps = psi_gaps(family, f, eps_pos)
    ok = bool(np.all(np.isfinite(gaps)))
    if len(eps_pos) > 1:
        ok &= bool(np.all(np.diff(gaps, axis=0) < 0))
    return AuditEntry("A9", "pass" if ok else "fail",
                      {"psi_l2_gaps": {str(e): g.tolist() for e, g in zip(eps_pos, gaps)}},
                      "" if ok else "psi gaps do not shrink as epsilon decreases")
