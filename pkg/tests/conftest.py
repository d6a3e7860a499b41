import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dmwp.dataio import build_problem  # noqa: E402
from dmwp.synth import instance, synth_corpus  # noqa: E402


@pytest.fixture
def students():
    """Inclusion-exclusion instance: 40 total, 25 and 20 passed, 10 failed both."""
    return instance("inclusion_exclusion", [40, 25, 20, 10])


@pytest.fixture
def small_corpus():
    return synth_corpus(None, 40, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_problem(values, answer, equation=None, pid="p"):
    text = "take " + " and ".join(str(v) for v in values) + " ."
    return build_problem(pid, text, answer, equation)


def pytest_terminal_summary(terminalreporter):
    from report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
