"""Shared pytest plumbing.

The acceptance tests report one PASS/FAIL line per criterion. Captured
stdout only surfaces for failing tests, so the lines are also collected
here and replayed in the terminal summary where they are always visible.
"""

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
