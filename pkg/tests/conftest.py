import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("stsub", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("stsub")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_numpy_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


def two_view_blobs(persons=6, per_view=2, d=5, spread=0.05, seed=0):
    """Well-separated persons: each person's images cluster tightly in both views."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((d, persons)) * 3.0
    cols, pid, vid = [], [], []
    for p in range(persons):
        for v in range(2):
            for _ in range(per_view):
                cols.append(centers[:, p] + spread * rng.standard_normal(d))
                pid.append(p)
                vid.append(v)
    return np.stack(cols, axis=1), np.array(pid), np.array(vid)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def check(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
