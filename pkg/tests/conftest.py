import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hhar.hierarchy import LabelHierarchy  # noqa: E402


@pytest.fixture
def four_node():
    """still/walking at the top, sitting/standing under still."""
    return LabelHierarchy.from_edges([
        ("r", "still"), ("r", "walking"), ("still", "sitting"), ("still", "standing"),
    ])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance results, echoed after the run whatever the capture mode
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    def record(number, ok, detail=""):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        ACCEPTANCE[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
