import numpy as np
import pytest

from gridcct.case_io import GridCase, load_case
from gridcct.gmrf import precision_from_b
from gridcct.grid_model import build_susceptance_matrix


def path_case(n=3, b=1.0, slack=1, areas=None):
    buses = [(i, (areas or {}).get(i, 1)) for i in range(1, n + 1)]
    branches = [(i, i + 1, b) for i in range(1, n)]
    return GridCase(buses, branches, slack, name=f"path{n}")


@pytest.fixture(scope="session")
def case14():
    return load_case("case14")


@pytest.fixture(scope="session")
def case30():
    return load_case("case30")


@pytest.fixture(scope="session")
def sm14(case14):
    return build_susceptance_matrix(case14)


@pytest.fixture(scope="session")
def model14(sm14):
    return precision_from_b(sm14)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
