"""Shared fixtures and the per-criterion acceptance summary."""

import pytest


def pytest_configure(config):
    config.acceptance = {}
    config.acceptance_detail = {}


@pytest.fixture
def report(request):
    """Attach a measured-value line to the acceptance summary of the current criterion."""
    def _report(text):
        request.config.acceptance_detail.setdefault(request.node.nodeid, []).append(text)
        print(text)
    return _report


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        number, title = marker.args
        item.config.acceptance[number] = (title, rep.passed, item.nodeid)


def pytest_terminal_summary(terminalreporter, config):
    if not config.acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(config.acceptance):
        title, passed, nodeid = config.acceptance[number]
        detail = "; ".join(config.acceptance_detail.get(nodeid, []))
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}  {detail}")
