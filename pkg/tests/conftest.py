import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if "test_acceptance" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.skipped):
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        name = report.nodeid.split("::")[-1]
        print(f"\n[acceptance] {name}: {status}", flush=True)


@pytest.fixture(scope="session")
def reachable_boards():
    from oracle import enumerate_reachable

    return enumerate_reachable()


@pytest.fixture(scope="session")
def win_in_one_boards():
    from oracle import immediate_win_positions

    return immediate_win_positions()
