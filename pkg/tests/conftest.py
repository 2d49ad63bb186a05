import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile(
    "thorough", max_examples=500, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_CRITERIA = []


@pytest.fixture
def record_criterion():
    """Collect one pass/fail line per acceptance criterion for the terminal summary."""

    def record(number, title, passed, detail=""):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}"
        if detail:
            line += f" :: {detail}"
        _CRITERIA.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_CRITERIA, key=lambda item: item[0]):
        terminalreporter.write_line(line)
