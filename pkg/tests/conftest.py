"""Shared pytest plumbing.

Tests import the package straight from src/ so the suite runs without an
install. Tests in test_acceptance.py carry a `criterion` marker; after the
run a one-line PASS/FAIL/SKIP verdict is printed per criterion.
"""

import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "src"))

_VERDICTS: dict = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(num, name): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    key = (marker.args[0], marker.args[1])
    if report.skipped:
        _VERDICTS.setdefault(key, "SKIP")
    elif report.failed:
        _VERDICTS[key] = "FAIL"
    elif report.when == "call" and _VERDICTS.get(key) != "FAIL":
        _VERDICTS[key] = "PASS"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), verdict in sorted(_VERDICTS.items()):
        terminalreporter.write_line(f"criterion {num} ({name}): {verdict}")
