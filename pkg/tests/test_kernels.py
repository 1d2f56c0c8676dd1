import json
import os
import subprocess
import sys

import numpy as np
import pytest

from fewphoton import _kernels

needs_numba = pytest.mark.skipif(not _kernels.HAS_NUMBA, reason="numba not importable or disabled")


def _inputs(rng):
    return {
        "bloch_coherence": (rng.normal(0, 10, 200), rng.uniform(0, 5, 200), 7.65, 0.4),
        "hilbert_direct": (rng.normal(size=257),),
        "convolve_direct": (rng.normal(size=300), np.hanning(21) / np.hanning(21).sum()),
        "mode_sum": (rng.normal(size=(3, 5, 4)) + 1j * rng.normal(size=(3, 5, 4)),
                     -rng.uniform(1, 5, (3, 4)) + 1j * rng.normal(size=(3, 4)), np.linspace(0, 2, 50)),
    }


@needs_numba
@pytest.mark.parametrize("name", sorted(_kernels.numpy_kernels))
def test_numba_matches_numpy(name):
    args = _inputs(np.random.default_rng(0))[name]
    a = _kernels.numpy_kernels[name](*args)
    b = _kernels.numba_kernels[name](*args)
    np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-12)


def test_hilbert_direct_of_lorentzian():
    # Re of 1/(1 - i x) has Hilbert transform x / (1 + x^2)
    x = np.linspace(-200, 200, 4001)
    out = _kernels.hilbert_direct(1 / (1 + x ** 2))
    mid = slice(1500, 2501)
    np.testing.assert_allclose(out[mid], (x / (1 + x ** 2))[mid], atol=2e-3)


def test_convolve_direct_complex_and_edges():
    k = np.array([0.25, 0.5, 0.25])
    x = np.array([1.0, 2.0, 3.0]) + 1j * np.array([0.0, 1.0, 0.0])
    out = _kernels.convolve_direct(x, k)
    np.testing.assert_allclose(out.real, [1.25, 2.0, 2.75])
    np.testing.assert_allclose(out.imag, [0.25, 0.5, 0.25])


SCRIPT = """
import json, numpy as np
from fewphoton import _kernels, EmitterParams, NoiseModel
from fewphoton.imperfect import g2_imperfect
from fewphoton.reconstruct import kramers_kronig
p = EmitterParams(0.87, 7.65, 0.2, 0.0, -0.26)
nz = NoiseModel(2.0, 4.0, 0.2, {"rr": 0.07})
tau = np.linspace(-2, 2, 81)
g = g2_imperfect("tt", 0.5, 1.7, tau, p, nz).values
w = np.linspace(-80, 80, 512)
h = kramers_kronig(1 / (1 + (w / 3.8) ** 2), w, method="direct")
print(json.dumps({"numba": _kernels.HAS_NUMBA, "g": g.tolist(), "h": h.tolist()}))
"""


def _run(disable):
    env = dict(os.environ)
    env.pop("FEWPHOTON_DISABLE_NUMBA", None)
    if disable:
        env["FEWPHOTON_DISABLE_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", SCRIPT], capture_output=True, text=True, env=env, check=True)
    return json.loads(res.stdout)


def test_env_switch_selects_numpy_and_agrees():
    slow = _run(disable=True)
    fast = _run(disable=False)
    assert slow["numba"] is False
    assert fast["numba"] is _kernels.HAS_NUMBA or os.environ.get("FEWPHOTON_DISABLE_NUMBA")
    np.testing.assert_allclose(slow["g"], fast["g"], rtol=1e-11)
    np.testing.assert_allclose(slow["h"], fast["h"], rtol=1e-11, atol=1e-13)
