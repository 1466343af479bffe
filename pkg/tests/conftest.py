import pytest

from wsblab.dynamics import SystemParams
from wsblab.equilibria import lagrange_points
from wsblab.lyapunov import orbit_at_energy
from wsblab.manifolds import STABLE, cut, globalize
from wsblab.wsb import default_geometry

MU_EM = 0.0121505856

# lines collected by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def params():
    return SystemParams(MU_EM)


@pytest.fixture(scope="session")
def points(params):
    return lagrange_points(params)


@pytest.fixture(scope="session")
def H1(points):
    return points.energies["L1"]


@pytest.fixture(scope="session")
def geom(params):
    return default_geometry(params)


@pytest.fixture(scope="session")
def orbit5(params, H1):
    """Lyapunov orbit half a thousandth above H(L1)."""
    return orbit_at_energy(H1 + 5e-4, params)


@pytest.fixture(scope="session")
def branch5(orbit5, params):
    return globalize(orbit5, STABLE, 100, 1e-6, params, max_turns=1)


@pytest.fixture(scope="session")
def cut0(branch5):
    return cut(branch5, 0.0, 0, max_gap=1e-2)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
