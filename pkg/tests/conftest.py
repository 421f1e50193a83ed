import time

import pytest

_LINES = {}


@pytest.fixture
def criterion(request):
    """Records a PASS/FAIL line for one acceptance criterion.

    Usage: ``criterion.start(n, budget_s)`` then ``criterion.check(ok, detail)``.
    The line is written whatever happens, including on exceptions."""
    rec = _Criterion()
    yield rec
    if rec.number is not None:
        if rec.ok is None:
            rec.ok, rec.detail = False, "error before check"
        _LINES[rec.number] = rec.line()
        print("\n" + rec.line())


class _Criterion:
    def __init__(self):
        self.number = None
        self.ok = None
        self.detail = ""

    def start(self, number, budget_s):
        self.number = number
        self.budget = budget_s
        self.t0 = time.perf_counter()

    def check(self, ok, detail=""):
        self.elapsed = time.perf_counter() - self.t0
        in_time = self.elapsed < self.budget
        self.ok = bool(ok) and in_time
        self.detail = f"{detail}; {self.elapsed:.1f}s of {self.budget:g}s"
        assert ok, detail
        assert in_time, f"took {self.elapsed:.1f}s, budget {self.budget:g}s"

    def line(self):
        return f"criterion {self.number:>2}: {'PASS' if self.ok else 'FAIL'}  {self.detail}"


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_LINES):
            terminalreporter.write_line(_LINES[n])
