"""Print one pass/fail line per acceptance criterion at the end of the run."""

import pytest

_outcomes = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    rep = outcome.get_result()
    if rep.when == "call" or rep.failed:
        key = (m.args[0], m.args[1])
        _outcomes[key] = _outcomes.get(key, True) and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for (n, text), ok in sorted(_outcomes.items()):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}")
