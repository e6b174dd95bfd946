import numpy as np
import pytest

from funbuffer.survdata import DesignedData


def random_designed(rng, n=30, L=4, p=2, ties=False, strata=None, scale=0.5):
    """Small random design with a mix of events and censoring."""
    Phi = rng.normal(0.0, scale, (n, L))
    Z = rng.normal(0.0, scale, (n, p))
    if ties:
        time = rng.integers(1, max(3, n // 3), n).astype(float)
    else:
        time = rng.exponential(1.0, n) + 1e-3
    event = (rng.uniform(size=n) < 0.75).astype(float)
    event[0] = 1.0
    st = None if strata is None else rng.integers(0, strata, n)
    if st is not None:
        for s in range(strata):
            idx = np.flatnonzero(st == s)
            if idx.size:
                event[idx[0]] = 1.0
    return DesignedData(Phi, Z, time, event, st)


def brute_logpl(data, alpha):
    """Breslow log partial likelihood by explicit risk-set loops."""
    eta = data.X @ alpha
    strata = np.zeros(data.n) if data.strata is None else data.strata
    total = 0.0
    for i in range(data.n):
        if data.event[i] == 0:
            continue
        risk = (data.time >= data.time[i]) & (strata == strata[i])
        total += eta[i] - np.log(np.exp(eta[risk]).sum())
    return total


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
