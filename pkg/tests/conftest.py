import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(n, ok, detail)."""
    def record(n, ok, detail):
        prev = _CRITERIA.get(n)
        ok = bool(ok) and (prev is None or prev[0])
        detail = detail if prev is None else f"{prev[1]}; {detail}"
        _CRITERIA[n] = (ok, detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")
