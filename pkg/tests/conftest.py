"""Shared pytest hooks.

Acceptance tests record a verdict line per criterion in ``ACCEPTANCE``; the
lines are repeated together at the end of the run.
"""

ACCEPTANCE = {}


def record(k, ok, detail):
    line = f"CRITERION {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[k] = line
    print("\n" + line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
