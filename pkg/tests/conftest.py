import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from irs_wpcn.channel import SystemParams, build_features, sample_channels  # noqa: E402
from irs_wpcn.rng import Stream  # noqa: E402


@pytest.fixture
def params():
    return SystemParams()


@pytest.fixture
def interf_params():
    return SystemParams(P_I=0.01)


def random_instance(M, N, interference, seed):
    p = SystemParams(M=M, N=N, P_I=0.01 if interference else 0.0)
    rng = Stream(seed)
    ch = sample_channels(p, rng)
    f = build_features(ch, interference)
    th = rng.uniform(2 * N, 0, 2 * np.pi)
    tau = float(rng.uniform(None, 0.05, 0.95))
    return p, ch, f, th[:N], th[N:], tau


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
