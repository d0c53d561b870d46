"""Shared pytest plumbing: collects the acceptance checklist lines and
prints them once at the end of the run (pytest captures per-test stdout of
passing tests, which would otherwise hide the pass lines)."""

ACCEPTANCE_LOG: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LOG:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LOG:
            terminalreporter.write_line(line)
