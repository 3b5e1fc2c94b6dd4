import numpy as np
import pytest
from hypothesis import settings

from response_lab import get_family, uniform_nodes
from response_lab.grid import GridDensity
from response_lab.solver import solve_invariant_density

settings.register_profile("lab", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("lab")


@pytest.fixture(scope="session")
def fam():
    return get_family("cusp-tent-example")


@pytest.fixture(scope="session")
def tent():
    return get_family("tent")


@pytest.fixture(scope="session")
def h0_sol(fam):
    return solve_invariant_density(fam, 0.0, grid_n=2048, tol=1e-10)


@pytest.fixture(scope="session")
def h0(h0_sol):
    return h0_sol.density


def random_density(rng, nodes, modes=6):
    """Positive trigonometric density with unit mass and a random spectrum."""
    k = np.arange(1, modes + 1)
    a = rng.normal(size=modes) / k ** 2
    b = rng.normal(size=modes) / k ** 2
    x = nodes[:, None]
    raw = a @ np.cos(2 * np.pi * k[:, None] * x.T) + b @ np.sin(2 * np.pi * k[:, None] * x.T)
    vals = 1.0 + 0.9 * raw / max(np.max(np.abs(raw)), 1e-12)
    f = GridDensity(nodes, vals)
    return f / f.integral()


@pytest.fixture(scope="session")
def density_suite():
    rng = np.random.default_rng(20240611)
    nodes = uniform_nodes(1024)
    return [random_density(rng, nodes) for _ in range(50)]
