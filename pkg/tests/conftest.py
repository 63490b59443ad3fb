import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from robust_boosting._backend import _numba_available, use_backend  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data"

BACKENDS = ["numpy"] + (["numba"] if _numba_available() else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    with use_backend(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_collection_modifyitems(config, items):
    if os.environ.get("RB_RUN_OVERNIGHT") == "1":
        return
    skip = pytest.mark.skip(reason="set RB_RUN_OVERNIGHT=1 to run")
    for item in items:
        if "overnight" in item.keywords:
            item.add_marker(skip)


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion."""
    def report(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
