"""Shared pytest plumbing: the acceptance verdict board.

The acceptance tests each register one human-readable PASS/FAIL line.
Printing from inside a test is swallowed by capture unless the test
fails, so the lines are replayed in a dedicated section after the run.
"""

_VERDICTS = []


def record_verdict(line: str) -> None:
    _VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
