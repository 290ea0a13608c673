"""Print one PASS/FAIL line per acceptance criterion at the end of a run."""

import re

_RESULTS = {}
_PATTERN = re.compile(r"test_criterion_(\d+)_(\w+)")


def pytest_runtest_logreport(report):
    m = _PATTERN.search(report.nodeid)
    if not m or "test_acceptance.py" not in report.nodeid:
        return
    key = (int(m.group(1)), m.group(2).replace("_", " "))
    if report.failed:
        _RESULTS[key] = "FAIL"
    elif report.when == "call":
        _RESULTS.setdefault(key, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), outcome in sorted(_RESULTS.items()):
        terminalreporter.write_line(f"criterion {num:2d}  {outcome}  {name}")
