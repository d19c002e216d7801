"""Shared pytest plumbing.

Exposes each phase's test report on the item so fixtures can tell after
the fact whether the test body passed, failed or skipped (used by the
checklist printer in test_acceptance.py).
"""

import pytest


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    setattr(item, "report_" + report.when, report)
