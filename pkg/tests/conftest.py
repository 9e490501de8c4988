import numpy as np
import pytest

from coveforge import tensor as T


@pytest.fixture(autouse=True)
def _reset_modes():
    """Every test starts at the default precision with checked mode off."""
    T.set_precision("f32")
    T.set_checked(False)
    yield
    T.set_precision("f32")
    T.set_checked(False)


@pytest.fixture
def f64():
    T.set_precision("f64")
    yield
    T.set_precision("f32")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
CRITERIA: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
