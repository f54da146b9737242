import time

import pytest

_LINES: list[str] = []


class Criterion:
    """Times one acceptance criterion and keeps its pass/fail line."""

    def __init__(self, number: int, title: str, budget: float):
        self.number, self.title, self.budget = number, title, budget
        self.start = time.perf_counter()

    def done(self, passed: bool, detail: str) -> None:
        elapsed = time.perf_counter() - self.start
        ok = bool(passed) and elapsed < self.budget
        _LINES.append(f"[{'PASS' if ok else 'FAIL'}] {self.number:2d} {self.title}: {detail} "
                      f"({elapsed:.1f}s / {self.budget:g}s)")
        assert passed, detail
        assert elapsed < self.budget, f"took {elapsed:.1f}s, budget {self.budget}s"


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
