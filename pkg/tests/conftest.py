import time
from contextlib import contextmanager

import pytest

_RESULTS = []


class _Criterion:
    def __init__(self, number, title, budget_s):
        self.number, self.title, self.budget_s = number, title, budget_s
        self.details = []

    def note(self, text):
        self.details.append(text)


@pytest.fixture
def criterion():
    """``with criterion(n, title, budget_s) as c:`` records one acceptance line."""

    @contextmanager
    def run(number, title, budget_s=None):
        c = _Criterion(number, title, budget_s)
        start = time.perf_counter()
        status = "FAIL"
        try:
            yield c
            elapsed = time.perf_counter() - start
            if budget_s is not None and elapsed > budget_s:
                c.note(f"runtime {elapsed:.1f}s exceeds {budget_s}s")
                raise AssertionError(f"criterion {number} took {elapsed:.1f}s > {budget_s}s")
            status = "PASS"
        except pytest.skip.Exception:
            status = "N/A"
            raise
        finally:
            elapsed = time.perf_counter() - start
            _RESULTS.append((number, status, title, elapsed, "; ".join(c.details)))

    return run


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, title, elapsed, detail in sorted(_RESULTS):
        line = f"[{status}] C{number:<2} {title} ({elapsed:.1f}s)"
        if detail:
            line += f" :: {detail}"
        terminalreporter.write_line(line)
