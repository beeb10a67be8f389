"""Shared pytest plumbing: the per-criterion verdict table of the acceptance suite.

Acceptance tests carry ``@pytest.mark.criterion(n, "title")``. A criterion
passes only if every test tagged with it passes; the table is printed at the
end of the session, one line per criterion.
"""

from __future__ import annotations

import pytest

_verdicts: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion the test checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and not report.failed):
        return
    n, title = mark.args
    entry = _verdicts.setdefault(n, {"title": title, "ok": True, "notes": []})
    if report.failed or report.skipped:
        entry["ok"] = False
    entry["notes"] += [v for k, v in item.user_properties if k == "measured"]


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_verdicts):
        e = _verdicts[n]
        line = f"criterion {n:2d}: {'PASS' if e['ok'] else 'FAIL'}  {e['title']}"
        if e["notes"]:
            line += "  [" + "; ".join(dict.fromkeys(e["notes"])) + "]"
        terminalreporter.write_line(line)
