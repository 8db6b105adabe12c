"""Shared pytest hooks: collects acceptance outcomes and prints one line per criterion."""
import pytest

ACCEPTANCE_CRITERIA = range(1, 10)
_results = {}


@pytest.fixture
def acceptance():
    """Call ``record(n, ok, detail)`` once per criterion before asserting."""

    def record(n, ok, detail):
        _results[n] = (bool(ok), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance")
    for n in ACCEPTANCE_CRITERIA:
        ok, detail = _results.get(n, (False, "did not complete"))
        terminalreporter.write_line(f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}")
