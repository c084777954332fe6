import numpy as np
import pytest

from meshenhance import scenario
from meshenhance.mesh import Mesh


def random_mesh(seed: int, subdivisions: int = 2) -> Mesh:
    """Random smooth closed mesh (perturbed icosphere), no degenerate faces."""
    rng = np.random.default_rng(seed)
    base = scenario.icosphere(subdivisions)
    bump = scenario._smooth_radial_bump(base.vertices, rng)
    verts = base.vertices * (1.0 + 0.2 * bump)[:, None]
    return Mesh(verts, base.faces)


# one line per acceptance criterion, echoed after the test summary so the
# PASS/FAIL lines are visible even when pytest captures stdout
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def sphere():
    return scenario.make_gt_mesh("sphere", 2, "gradient")


@pytest.fixture(scope="session")
def small_sphere():
    return scenario.make_gt_mesh("sphere", 1, "gradient")
