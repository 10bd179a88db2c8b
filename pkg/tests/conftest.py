import pytest

from fhnlab.model import default_model
from fhnlab.spatial import Grid


@pytest.fixture(scope="session")
def small_grid():
    return Grid(1, 10.0, 64)


@pytest.fixture(scope="session")
def small_model(small_grid):
    return default_model(small_grid)


def pytest_terminal_summary(terminalreporter):
    from gate import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
