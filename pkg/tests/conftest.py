import pytest

ACCEPTANCE_RESULTS = []


@pytest.fixture
def criterion():
    """Record a one-line verdict for an acceptance criterion, then assert it."""

    def _record(number, name, passed, detail=""):
        verdict = "PASS" if passed else "FAIL"
        line = f"criterion {number:2d} ({name}): {verdict}"
        if detail:
            line += f" — {detail}"
        ACCEPTANCE_RESULTS.append(line)
        assert passed, line

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
