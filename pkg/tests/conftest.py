"""Collects acceptance-criterion outcomes and prints one line per criterion
at the end of the run."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, name): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    # the call phase decides; a failing fixture setup counts as a failure
    if report.when == "call" or (report.when == "setup" and report.failed):
        number, name = marker.args
        detail = dict(item.user_properties).get("detail", "")
        _RESULTS[number] = (name, report.passed and report.when == "call", detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        name, passed, detail = _RESULTS[number]
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {name}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
