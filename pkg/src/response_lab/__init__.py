"""Numerical linear response for interval maps with a cusp-type turning point."""

__version__ = "0.1.0"

from .errors import (ConfigError, ConvergenceError, CuspProximityError, DomainError, NoPreimageError,
                     ResponseLabError)
from .grid import GridDensity, norm, refined_nodes, uniform_nodes
from .maps import (MapFamily, audit_assumptions, available_families, branch_inverse, derivatives, evaluate,
                   get_family, perturbation_derivs, register_family)
from .response import (ResponseReport, coefficient_A, coefficient_B, linear_response, operator_difference_errors,
                       response_term, validate_fd)
from .solver import (birkhoff_check, invariant_density, resolvent_solve, solve_invariant_density, spectrum,
                     ulam_oracle)
from .transfer import (apply, apply_at, apply_derivative, apply_second_derivative, l2_bound_check, ly_constants,
                       psi_components, psi_gaps)

__all__ = [
    "ConfigError", "ConvergenceError", "CuspProximityError", "DomainError", "NoPreimageError", "ResponseLabError",
    "GridDensity", "norm", "refined_nodes", "uniform_nodes",
    "MapFamily", "audit_assumptions", "available_families", "branch_inverse", "derivatives", "evaluate",
    "get_family", "perturbation_derivs", "register_family",
    "ResponseReport", "coefficient_A", "coefficient_B", "linear_response", "operator_difference_errors",
    "response_term", "validate_fd",
    "birkhoff_check", "invariant_density", "resolvent_solve", "solve_invariant_density", "spectrum", "ulam_oracle",
    "apply", "apply_at", "apply_derivative", "apply_second_derivative", "l2_bound_check", "ly_constants",
    "psi_components", "psi_gaps",
]
