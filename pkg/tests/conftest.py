import os
import sys
import uuid

import pytest
from hypothesis import HealthCheck, settings

from usemetrics.core import RequestType, UsageEvent

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_event(i, session="", user=None, rtype="AbstractView", resource="R1", ts=0):
    eid = str(uuid.UUID(int=i + 1))
    return UsageEvent(eid, session, user, RequestType(rtype), resource, ts)


@pytest.fixture
def ev():
    return make_event


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
