import time
from contextlib import contextmanager

import pytest

_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_KEY] = {}


class Criterion:
    """Collects the outcome of one acceptance criterion; the run summary prints them all."""

    def __init__(self, store, number, title, budget):
        self.store, self.number, self.title, self.budget = store, number, title, budget
        self.details = []
        self.checks = []

    def check(self, ok, detail):
        self.checks.append(bool(ok))
        self.details.append(detail)
        assert ok, detail


@pytest.fixture
def criterion(request):
    store = request.config.stash[_KEY]

    @contextmanager
    def open_criterion(number, title, budget):
        c = Criterion(store, number, title, budget)
        t0 = time.perf_counter()
        ok = False
        try:
            yield c
            ok = all(c.checks)
        finally:
            elapsed = time.perf_counter() - t0
            within = elapsed <= budget
            store[number] = (ok and within, title, elapsed, budget, "; ".join(c.details))
            print(f"criterion {number}: {'PASS' if ok and within else 'FAIL'} ({elapsed:.1f}s / {budget:.0f}s)")
        assert within, f"criterion {number} took {elapsed:.1f}s, budget {budget:.0f}s"

    return open_criterion


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        ok, title, elapsed, budget, detail = store[number]
        terminalreporter.write_line(
            f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title} ({elapsed:.1f}s / {budget:.0f}s): {detail}")
