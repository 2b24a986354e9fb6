import numpy as np
import pytest


def euler_tank(temp, seconds, C, G, B, ambient, inlet, eta, g, h=0.01):
    """Forward-Euler integration of the continuous tank ODE with a tiny step."""
    n = int(round(seconds / h))
    for _ in range(n):
        temp = temp + h * (-G * (temp - ambient) - B * (temp - inlet) + eta * g) / C
    return temp


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; printed in the terminal summary."""
    lines = request.config.stash.setdefault(_CRITERIA, [])

    def record(number, ok, detail):
        lines.append((number, "PASS" if ok else "FAIL", detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for number, verdict, detail in sorted(lines):
            terminalreporter.write_line(f"criterion {number}: {verdict}  {detail}")
