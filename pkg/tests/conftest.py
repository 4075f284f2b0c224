"""Shared pytest wiring: the acceptance verdict board.

Acceptance tests push one verdict line each through the ``acceptance_log``
fixture; the lines are replayed in a dedicated section of the terminal
summary so the full scoreboard is visible even when every test passes
(captured stdout of passing tests is normally swallowed).
"""

import pytest

_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    def record(line: str) -> None:
        _LINES.append(line)
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _LINES:
        terminalreporter.ensure_newline()
        terminalreporter.section("acceptance verdicts", sep="-")
        for line in _LINES:
            terminalreporter.write_line(line)
