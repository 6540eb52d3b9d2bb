import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

CRITERIA = {
    1: "litmus golden suite",
    2: "walkthrough regression",
    3: "SC differential",
    4: "oracle equivalence",
    5: "conformance",
    6: "mutation sensitivity",
    7: "relational-algebra micro-suite",
}

_results = {}


class Reporter:
    def __call__(self, n, ok, detail=""):
        _results[n] = (bool(ok), detail)
        return ok


@pytest.fixture
def report():
    return Reporter()


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        if n not in _results:
            continue
        ok, detail = _results[n]
        line = f"criterion {n} ({CRITERIA[n]}): {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f"  {detail}"
        terminalreporter.write_line(line)
