import os
import re
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# Signatures used by the group-theory and equivariance suites.
GROUP_SIGNATURES = [(2, 0, 0), (3, 0, 0), (1, 3, 0), (5, 0, 0), (0, 5, 0), (2, 0, 1), (1, 1, 1)]
LAYER_SIGNATURES = [(2, 0, 0), (3, 0, 0), (1, 3, 0), (5, 0, 0), (2, 0, 1)]


def all_signatures(max_n: int):
    return [(p, q, n - p - q) for n in range(1, max_n + 1) for p in range(n + 1) for q in range(n + 1 - p)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance summary ----------------------------------------------------------

_ACCEPTANCE = pytest.StashKey[list]()


class _Criterion:
    def __init__(self, lines, cid, title):
        self.lines, self.cid, self.title = lines, cid, title
        self.details: list[str] = []

    def note(self, text):
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.details)
        if exc_type is AssertionError and str(exc):
            detail = f"{detail}; {str(exc).splitlines()[0]}" if detail else str(exc).splitlines()[0]
        self.lines.append((self.cid, f"[{status}] criterion {self.cid}: {self.title}" + (f" ({detail})" if detail else "")))
        print(self.lines[-1][1])
        return False


@pytest.fixture
def criterion(request):
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])
    return lambda cid, title: _Criterion(lines, cid, title)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")

    def order(item):
        m = re.match(r"(\d+)(.*)", item[0])
        return int(m.group(1)), m.group(2)

    for _, line in sorted(lines, key=order):
        terminalreporter.write_line(line)
