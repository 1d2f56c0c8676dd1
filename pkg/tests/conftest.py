import math

import numpy as np
import pytest

from fewphoton import EmitterParams, NoiseModel

GAMMA = 7.65
TWO_PI = 2.0 * math.pi

# criterion number -> (passed, one-line detail)
ACCEPTANCE = {}


def record(number: int, passed: bool, detail: str):
    ACCEPTANCE[number] = (bool(passed), detail)
    line = f"ACCEPTANCE {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    return line


@pytest.fixture
def table_params():
    return EmitterParams(beta=0.87, gamma_tot=GAMMA, gamma_d=0.0, xi=-0.26)


@pytest.fixture
def table_noise():
    return NoiseModel(sigma_short=TWO_PI * 0.33, sigma_long=TWO_PI * 0.66, sigma_irf=0.2,
                      background={"rr": 0.07})


@pytest.fixture
def ideal_params():
    return EmitterParams(beta=0.87, gamma_tot=GAMMA)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in range(1, 11):
        if k in ACCEPTANCE:
            ok, detail = ACCEPTANCE[k]
            tr.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            tr.write_line(f"criterion {k:>2}: NOT RUN")
