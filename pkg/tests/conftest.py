import pytest

from robust_sls.sls import Plant, SystemResponse


@pytest.fixture
def deadbeat_scalar():
    """``a = 2, b = 1`` with the unique ``T = 2`` deadbeat response."""
    return Plant([[2.0]], [[1.0]]), SystemResponse.from_taps([[[1.0]], [[0.0]]], [[[-2.0]], [[0.0]]])


# Acceptance criteria record one line each; they are echoed at the end of
# the run so they show up without ``-s``.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES
