import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(k, ok, detail)``; returns ``ok``."""
    def record(k, ok, detail):
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'} | {detail}"
        CRITERIA[k] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])
