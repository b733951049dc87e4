import pytest

ACCEPTANCE_RESULTS = []


@pytest.fixture(scope="session")
def acceptance_recorder():
    """Collect one pass/fail line per acceptance criterion for the summary."""
    return ACCEPTANCE_RESULTS.append


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
