import numpy as np
import pytest

from sparse_dfe import get_constellation


@pytest.fixture
def qpsk():
    return get_constellation("qpsk")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_unitary(rng, m):
    q, r = np.linalg.qr(rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


# one line per acceptance criterion, printed after the run
CRITERIA: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n])
