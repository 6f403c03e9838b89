from __future__ import annotations

import pytest

from hypch.potential import polynomial_potential, quartic_potential


@pytest.fixture(scope="session")
def quartic():
    return quartic_potential()


# (u^2 - 1)^2 (1 + u/2 + u^2/2) / 4: a non-even sextic with F''(1) = 4, F''(-1) = 2
SEXTIC = [0.25, 0.125, -0.375, -0.25, 0.0, 0.125, 0.125]


@pytest.fixture(scope="session")
def sextic():
    return polynomial_potential(SEXTIC, name="sextic")


# one line per acceptance criterion, echoed after the test run
ACCEPTANCE_LINES: list[tuple[int, str]] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
