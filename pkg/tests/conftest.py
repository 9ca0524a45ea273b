"""Shared pytest plumbing: the acceptance suite registers one PASS/FAIL line
per criterion, echoed after the run regardless of output capture."""

CRITERION_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria:")
        for line in CRITERION_LINES:
            terminalreporter.write_line(line)
