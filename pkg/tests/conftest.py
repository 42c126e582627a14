import math

import pytest
from hypothesis import HealthCheck, settings

from mildns.grid import make_grid

settings.register_profile("mildns", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("mildns")

ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture(scope="session")
def grid2():
    return make_grid(2, 32, 2 * math.pi)


@pytest.fixture(scope="session")
def grid3():
    return make_grid(3, 16, 2 * math.pi)
