"""Collects the acceptance verdict lines and prints them after the test summary."""

import helpers


def pytest_terminal_summary(terminalreporter):
    lines = helpers.ACCEPTANCE_LINES
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":").rstrip("abc"))):
        terminalreporter.write_line(line)
