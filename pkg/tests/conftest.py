from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

_RESULTS: dict[int, tuple[str, str, float]] = {}


def pytest_configure(config: pytest.Config) -> None:
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item: pytest.Item, call: pytest.CallInfo):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        prev = _RESULTS.get(n)
        status = "PASS" if report.outcome == "passed" else "FAIL"
        # a criterion split over several tests passes only if all of them pass
        if prev is not None and prev[0] == "FAIL":
            status = "FAIL"
        elapsed = report.duration + (prev[2] if prev else 0.0)
        _RESULTS[n] = (status, title, elapsed)


def pytest_terminal_summary(terminalreporter, exitstatus, config) -> None:
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        status, title, elapsed = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {title}  ({elapsed:.2f}s)")
