import numpy as np
import pytest

from farmamba.tensor import Tensor

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def t64():
    """Wrap an array as a float64 leaf that records gradients."""

    def make(a, grad=True):
        return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)

    return make


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
