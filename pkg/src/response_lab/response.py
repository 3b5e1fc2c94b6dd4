"""First-order response of the invariant density to the family parameter.

``h_eps = h_0 + eps (I - L_0)^{-1} q + o(eps)`` with
``q = L_0[A_0 h_0' + B_0 h_0]``, ``A = -dT/deps / T'`` and ``B = A'``.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError
from .grid import GridDensity, norm
from .maps import MapFamily
from .solver import make_grid, resolvent_solve, solve_invariant_density, thread_cap
from .transfer import apply, apply_derivative, operator_for

DEFAULT_EPS_LIST = (0.04, 0.02, 0.01, 0.005)
DELTA_RATIO_MAX = 0.5


def coefficient_A(family: MapFamily, x, eps: float = 0.0):
    """``A_eps = -(dT/deps) / T'``."""
    return -family.deps(x, eps) / family.d1(x, eps)


def coefficient_B(family: MapFamily, x, eps: float = 0.0):
    """``B_eps = (dT/deps) T'' / T'^2 - (dT'/deps) / T'``, the x-derivative of ``A_eps``."""
    d1 = family.d1(x, eps)
    return family.deps(x, eps) * family.d2(x, eps) / d1 ** 2 - family.deps_d1(x, eps) / d1


def _source_integrand(family: MapFamily, h0: GridDensity, eps: float):
    def integrand(y, w):
        dt = family._deps(y, eps)
        a_coef = -dt * w.inv_d1
        b_coef = dt * w.w1 - family._deps_d1(y, eps) * w.inv_d1
        return a_coef * h0(y, deriv=1) + b_coef * h0(y)

    return integrand


def response_term(family: MapFamily, h0: GridDensity, mass_tol: float = 1e-8) -> GridDensity:
    """Source ``q = L_0[A_0 h_0' + B_0 h_0]`` on ``[0, a_0)``, zero on ``[a_0, 1]``.

    ``A_0``, ``B_0`` and ``h_0'`` are evaluated at the exact preimages of each
    node; only ``h_0`` itself is interpolated.
    """
    if abs(h0.integral() - 1.0) > mass_tol:
        raise DomainError(f"h0 must be a normalised density, integral is {h0.integral():.12f}")
    op = operator_for(family, 0.0, h0.nodes, h0.interp_order)
    return h0.with_values(op.pointwise(_source_integrand(family, h0, 0.0)))


def operator_difference_errors(family: MapFamily, h0: GridDensity, q: GridDensity, eps_list) -> list[float]:
    """``||(L_eps - L_0) h_0 / eps - q||_1`` for each ``eps``."""
    base = apply(family, h0, 0.0)
    return [norm((apply(family, h0, e) - base) / e - q, "L1") for e in eps_list]


@dataclass
class ResponseReport:
    family: str
    grid_n: int
    h0: GridDensity
    q: GridDensity
    response: GridDensity
    q_mean: float
    h0_residual: float
    resolvent_residual: float
    resolvent_residual_raw: float
    resolvent_terms: int
    resolvent_tol: float
    response_mean: float
    h0_prime_consistency: float
    eps_list: list = field(default_factory=list)
    fd_quotients: list = field(default_factory=list)
    deltas: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    failure: str | None = None
    null_response: bool = False
    timings: dict = field(default_factory=dict)

    @property
    def ratios(self) -> list:
        return [None] + [self.deltas[i] / self.deltas[i - 1] for i in range(1, len(self.deltas))]

    @property
    def monotone(self) -> bool | None:
        if len(self.deltas) < 2:
            return None
        return bool(all(b < a for a, b in zip(self.deltas, self.deltas[1:])))

    @property
    def overall_ratio(self) -> float | None:
        if len(self.deltas) < 2:
            return None
        return self.deltas[-1] / self.deltas[0]

    @property
    def verdict(self) -> str:
        if self.failure:
            return "FAIL"
        if len(self.deltas) < 2:
            return "WARN"
        ok = self.monotone and self.overall_ratio <= DELTA_RATIO_MAX
        return "PASS" if ok else "FAIL"

    def certificates(self) -> dict:
        return {
            "h0_residual_l1": self.h0_residual,
            "h0_mass": self.h0.integral(),
            "q_mean": self.q_mean,
            "q_l1": norm(self.q, "L1"),
            "q_w11": norm(self.q, "W11"),
            "resolvent_residual_l1": self.resolvent_residual,
            "resolvent_residual_raw_l1": self.resolvent_residual_raw,
            "resolvent_bound": 2.0 * self.resolvent_tol * norm(self.q, "L1"),
            "resolvent_terms": self.resolvent_terms,
            "response_mean": self.response_mean,
            "response_l1": norm(self.response, "L1"),
            "h0_prime_consistency_l1": self.h0_prime_consistency,
        }


def linear_response(
    family: MapFamily,
    grid_n: int = 2048,
    tol: float = 1e-10,
    resolvent_tol: float = 1e-12,
    refine_near_ae: bool = False,
) -> ResponseReport:
    """Compute ``h_0``, the source ``q`` and the response ``(I - L_0)^{-1} q``."""
    timings = {}
    t0 = time.perf_counter()
    nodes = make_grid(family, 0.0, grid_n, refine_near_ae)
    sol = solve_invariant_density(family, 0.0, tol=tol, nodes=nodes)
    h0 = sol.density
    timings["h0"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    q = response_term(family, h0)
    rs = resolvent_solve(family, 0.0, q, tol=resolvent_tol, h=h0)
    timings["response"] = time.perf_counter() - t0
    consistency = norm(apply_derivative(family, h0, None, 0.0) - h0.derivative(), "L1")
    return ResponseReport(
        family=family.name, grid_n=grid_n, h0=h0, q=q, response=rs.solution, q_mean=rs.q_mean,
        h0_residual=sol.residual_l1, resolvent_residual=rs.residual_l1,
        resolvent_residual_raw=rs.residual_raw_l1, resolvent_terms=rs.terms_used,
        resolvent_tol=resolvent_tol, response_mean=rs.solution.integral(),
        h0_prime_consistency=consistency, timings=timings,
    )


def validate_fd(
    family: MapFamily,
    grid_n: int = 2048,
    eps_list=DEFAULT_EPS_LIST,
    tol: float = 1e-10,
    resolvent_tol: float = 1e-12,
    null_response: bool = False,
    refine_near_ae: bool = False,
) -> ResponseReport:
    """Finite-difference check of the response on a shared grid.

    ``delta(eps) = ||(h_eps - h_0)/eps - response||_1`` must shrink as eps
    does. With ``null_response`` the response is replaced by zero, a negative
    control whose deltas stall near ``||response||_1``.
    """
    eps_list = [family.check_eps(e) for e in eps_list]
    if not eps_list:
        raise DomainError("eps_list must not be empty")
    if any(e <= 0 for e in eps_list) or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise DomainError("eps_list must be positive and strictly decreasing")
    report = linear_response(family, grid_n, tol, resolvent_tol, refine_near_ae)
    report.eps_list = list(eps_list)
    report.null_response = null_response
    target = report.response * 0.0 if null_response else report.response
    t0 = time.perf_counter()

    def solve(e):
        return solve_invariant_density(family, e, tol=tol, nodes=report.h0.nodes)

    workers = thread_cap() or 1
    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                sols = list(pool.map(solve, eps_list))
        else:
            sols = [solve(e) for e in eps_list]
    except ConvergenceError as exc:
        report.failure = f"h_eps did not converge: {exc}"
        return report
    for e, s in zip(eps_list, sols):
        quotient = (s.density - report.h0) / e
        report.fd_quotients.append(quotient)
        report.deltas.append(norm(quotient - target, "L1"))
        report.residuals.append(s.residual_l1)
    report.timings["fd"] = time.perf_counter() - t0
    return report
