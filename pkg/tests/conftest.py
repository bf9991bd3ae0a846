import numpy as np
import pytest

from nanoplasmon import materials


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False,
        help="run long FDTD convergence tests (2 nm grid, tens of minutes)",
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running FDTD test, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def gold():
    return materials.johnson_christy_gold()


@pytest.fixture(scope="session")
def gold_dl(gold):
    return materials.fit_drude_lorentz(gold, (450.0, 750.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report one line each at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(k.split("-")[0]), k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
