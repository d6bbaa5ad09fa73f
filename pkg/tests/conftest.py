from __future__ import annotations

import numpy as np
import pytest

from threebody.estimator import REFERENCE_SET, FrequencyMeasurement
from threebody.spin_model import HamiltonianParams

# measured frequencies (GHz) and sigmas (kHz) of the reference 7-set, in REFERENCE_SET order
REFERENCE_GHZ = (2.58774, 4.62194, 5.42518, 5.18069, 2.59436, 4.57770, 3.18918)
REFERENCE_SIGMA_KHZ = (40, 40, 40, 20, 40, 20, 30)
REFERENCE_PARAMS = HamiltonianParams(
    (5415.3875, 4888.2125, 2879.4425), (-6.55125, 6.16375, 144.19625), -4.50875
)


@pytest.fixture
def reference_measurements():
    return [
        FrequencyMeasurement(t, 1e3 * f, 1e-3 * s)
        for t, f, s in zip(REFERENCE_SET, REFERENCE_GHZ, REFERENCE_SIGMA_KHZ)
    ]


@pytest.fixture
def reference_params():
    return REFERENCE_PARAMS


def random_params(rng, scale=(6000.0, 200.0, 20.0)) -> HamiltonianParams:
    w = rng.uniform(-scale[0], scale[0], 3)
    j = rng.uniform(-scale[1], scale[1], 3)
    return HamiltonianParams(w, j, rng.uniform(-scale[2], scale[2]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdict lines, echoed in the terminal summary
_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Call with ``(number, title, ok, detail)``; prints and records one line."""
    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        print(line)
        request.config.stash[_VERDICTS].append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
