"""Prints one pass/fail line per acceptance criterion at the end of the run."""

import pytest

import helpers


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        # a criterion split over several tests fails if any part fails
        if helpers.ACCEPTANCE.get(n) != "FAIL":
            helpers.ACCEPTANCE[n] = "PASS" if rep.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not helpers.ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(helpers.ACCEPTANCE):
        detail = helpers.ACCEPTANCE_DETAIL.get(n, "")
        terminalreporter.write_line(f"criterion {n:2d}: {helpers.ACCEPTANCE[n]}  {detail}")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")
