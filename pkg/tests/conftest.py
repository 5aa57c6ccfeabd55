import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stokes_hybrid.mesh import generate_rectangle

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

VARIANTS = ["HDG", "EDG_HDG", "EDG"]


@pytest.fixture
def two_cells():
    return generate_rectangle(0.0, 0.0, 1.0, 1.0, 1, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


def skewed_mesh(nx=3, ny=3, seed=0, amount=0.2):
    """Structured unit-square mesh with interior vertices jittered."""
    from stokes_hybrid.mesh import Mesh

    m = generate_rectangle(0.0, 0.0, 1.0, 1.0, nx, ny)
    rng = np.random.default_rng(seed)
    v = m.vertices.copy()
    interior = np.ones(len(v), dtype=bool)
    interior[m.boundary_vertices()] = False
    v[interior] += amount * rng.uniform(-0.5, 0.5, (interior.sum(), 2)) / max(nx, ny)
    return Mesh(v, m.cells, m.boundary_tags)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
