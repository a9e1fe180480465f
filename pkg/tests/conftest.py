import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

_LINES = []


@pytest.fixture
def verdict():
    """Record one pass/fail line per acceptance criterion."""
    def record(label, ok, detail, seconds, budget):
        ok = bool(ok) and seconds < budget
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail} ({seconds:.1f} s, budget {budget:.0f} s)"
        _LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
