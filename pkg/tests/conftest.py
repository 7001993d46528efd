import time

import numpy as np
import pytest

from editleak.worldsim import WorldConfig, new_world

SUITE_BUDGET_S = 120.0
_CRITERIA: list[tuple[str, bool, str]] = []
_START = time.perf_counter()


@pytest.fixture(scope="session")
def world():
    """Default desk-scale world."""
    return new_world(WorldConfig(seed=0))


@pytest.fixture(scope="session")
def world64():
    return new_world(WorldConfig(d_in=64, d_out=48, seed=23, n_preserved=16))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion():
    """Record one acceptance verdict; printed in the terminal summary."""
    def record(name: str, passed: bool, detail: str = ""):
        _CRITERIA.append((name, bool(passed), detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    elapsed = time.perf_counter() - _START
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for name, ok, detail in _CRITERIA:
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    terminalreporter.write_line(
        f"{'PASS' if elapsed < SUITE_BUDGET_S else 'FAIL'}  suite wall-clock "
        f"{elapsed:.1f} s (budget {SUITE_BUDGET_S:.0f} s)")


def pytest_sessionfinish(session, exitstatus):
    if time.perf_counter() - _START >= SUITE_BUDGET_S and exitstatus == 0:
        session.exitstatus = 1
