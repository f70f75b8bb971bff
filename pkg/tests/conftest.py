import sys

import pytest

from dbgtorus.conformal import build_metric
from dbgtorus.profile import CapParams, build_profile


@pytest.fixture(scope="session")
def profile5():
    return build_profile(CapParams(a=5.0))


@pytest.fixture(scope="session")
def metric5(profile5):
    return build_metric(profile5)


@pytest.fixture(scope="session")
def metric25():
    return build_metric(build_profile(CapParams(a=25.0)))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    LINES = getattr(mod, "LINES", [])
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
