"""Collects acceptance-criterion outcomes and prints one line per criterion at the end."""

import pytest

_REPORT = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_REPORT] = {}


class Criterion:
    def __init__(self, store, number, title):
        self.store, self.number, self.title = store, number, title
        store[number] = (title, False, "did not complete")

    def report(self, passed: bool, detail: str) -> bool:
        self.store[self.number] = (self.title, bool(passed), detail)
        return bool(passed)


@pytest.fixture
def criterion(request):
    """``criterion(n, title)`` -> recorder; unreported criteria show as FAIL."""
    store = request.config.stash[_REPORT]
    return lambda number, title: Criterion(store, number, title)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rep = config.stash[_REPORT]
    if not rep:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(rep):
        title, ok, detail = rep[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  [{n}] {title}: {detail}")
