"""Shared pytest plumbing.

The acceptance tests record one verdict line per criterion; the hook
below prints them as a block after the run so the verdicts are visible
even though passing tests have their stdout captured.
"""

ACCEPTANCE_LINES = []


def record(line):
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
