import numpy as np
import pytest

from dhcn.synthetic import random_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    """6 images on a 3x4 grid with 5-dim histogram cells and 3 concepts."""
    return random_dataset(n_images=6, grid=(3, 4), feature_dim=5, n_concepts=3, seed=0)


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion.

    Lines are printed immediately and repeated in the terminal summary.
    """
    lines = request.config.stash.setdefault(_LINES, [])

    def report(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} ({detail})"
        print(line)
        lines.append((number, line))
        return ok

    return report


_LINES = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
