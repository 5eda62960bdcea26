"""Shared pytest plumbing.

Acceptance tests append their pass/fail lines here so the terminal summary
shows one line per criterion even when stdout capture is on.
"""

acceptance_lines = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
