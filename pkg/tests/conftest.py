import numpy as np
import pytest

from s2ac.core import RngStream


@pytest.fixture
def rng():
    return RngStream(1234)


@pytest.fixture
def np_rng():
    return np.random.default_rng(20240607)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """``acceptance(n, title, ok, detail)`` records a pass/fail line and asserts ``ok``."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(n, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {title}" + (f" ({detail})" if detail else "")
        lines.append((n, line))
        print(line, flush=True)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
