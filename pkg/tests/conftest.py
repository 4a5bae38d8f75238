import pytest
from hypothesis import HealthCheck, settings

from kglab.numerics import Grid1D
from kglab.spectral import build_basis, build_weights

settings.register_profile(
    "kglab", deadline=None, max_examples=25, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("kglab")

# one line per acceptance criterion, printed after the run
CRITERIA: dict[int, str] = {}


@pytest.fixture(scope="session")
def grid():
    return Grid1D(60.0, 4801)


@pytest.fixture(scope="session")
def basis(grid):
    return build_basis(grid)


@pytest.fixture(scope="session")
def weights(grid):
    return build_weights(grid)


@pytest.fixture(scope="session")
def coarse_grid():
    return Grid1D(40.0, 1601)


@pytest.fixture(scope="session")
def coarse_basis(coarse_grid):
    return build_basis(coarse_grid)


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str):
        CRITERIA[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[k])
