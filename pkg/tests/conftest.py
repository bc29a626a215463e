import math

import numpy as np
import pytest


class MidpointRng:
    """Stand-in generator whose uniform draws always land on the interval midpoint."""

    def uniform(self, low=0.0, high=1.0, size=None):
        mid = (np.asarray(low, dtype=float) + np.asarray(high, dtype=float)) / 2.0
        if size is None:
            return float(mid)
        return np.broadcast_to(mid, size).copy()


@pytest.fixture
def midpoint_rng():
    return MidpointRng()


def finite_difference(fn, params, h=1e-5):
    """Central differences of scalar ``fn()`` with respect to every entry of ``params``."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            up = fn()
            p[i] = old - h
            down = fn()
            p[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def max_relative_error(a_list, b_list, floor=1e-8):
    worst = 0.0
    for a, b in zip(a_list, b_list):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
        worst = max(worst, float(np.max(np.abs(a - b) / denom)))
    return worst


def seeded(seed):
    return np.random.default_rng(seed)


LOG_2PI = math.log(2 * math.pi)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Collects one summary line per acceptance criterion for the terminal report."""
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
