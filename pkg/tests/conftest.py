import pytest
from hypothesis import settings

from pssurf import fixtures

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def group1():
    return fixtures.load("group1")


@pytest.fixture(params=fixtures.GROUPS[1:])
def inconsistent_system(request):
    return fixtures.load(request.param)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
