import warnings

import numpy as np
import pytest

from afdm_isac.afdm import build_config
from afdm_isac.errors import RangeQuantizationWarning


@pytest.fixture
def cfg():
    return build_config()


@pytest.fixture
def small_cfg():
    return build_config(N=32, alpha_max=1, ell_max=4, N_cpp=4)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(autouse=True)
def _quiet_quantization():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RangeQuantizationWarning)
        yield


# acceptance verdicts, echoed once more in the terminal summary
ACCEPTANCE = []


def record(criterion, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    print(line)
    ACCEPTANCE.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
