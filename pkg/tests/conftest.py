"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by this test")


def pytest_runtest_logreport(report):
    marks = dict(report.user_properties).get("criterion")
    if marks is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        ok = report.outcome == "passed" and not hasattr(report, "wasxfail")
        measured = dict(report.user_properties).get("measured", "")
        _RESULTS.setdefault(marks, []).append((ok, measured))


def pytest_runtest_setup(item):
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        number, title = mark.args
        item.user_properties.append(("criterion", (number, title)))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for (number, title), parts in sorted(_RESULTS.items()):
        ok = all(p[0] for p in parts)
        measured = "; ".join(p[1] for p in parts if p[1])
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title}"
        tr.write_line(line + (f"  [{measured}]" if measured else ""))
