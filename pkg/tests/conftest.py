import pytest

from deformed_mp.measure import preset

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def f1():
    return preset("f1")


@pytest.fixture(scope="session")
def f2():
    return preset("f2")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
