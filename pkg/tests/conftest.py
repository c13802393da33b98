"""Shared fixtures and the per-criterion summary of the acceptance suite."""

import re

import pytest

_CRITERION = re.compile(r"test_criterion_(\d+)")
_RESULTS: dict = {}
_DETAILS: dict = {}


@pytest.fixture
def record(request):
    """Attach a one-line detail to the acceptance criterion of the calling test."""
    m = _CRITERION.search(request.node.name)

    def _record(text: str) -> None:
        if m:
            _DETAILS.setdefault(int(m.group(1)), []).append(text)

    return _record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = _CRITERION.search(item.name)
    if not m:
        return
    n = int(m.group(1))
    failed = rep.failed and not hasattr(rep, "wasxfail")
    if rep.when == "call" or failed:
        prev = _RESULTS.get(n, "PASS")
        _RESULTS[n] = "FAIL" if failed or prev == "FAIL" else "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        detail = "; ".join(_DETAILS.get(n, []))
        terminalreporter.write_line(f"criterion {n:2d}: {_RESULTS[n]}  {detail}".rstrip())
