"""Time the numba kernels against their numpy twins.

Run with ``python benchmarks/bench_kernels.py``. The first part calls both
kernel tables directly on the same inputs. The second part runs a
representative workload (an imperfect g2 trace and a direct Hilbert
transform) in two fresh interpreters, one with ``FEWPHOTON_DISABLE_NUMBA=1``.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from fewphoton import _kernels


def inputs(size: int, rng: np.random.Generator) -> dict:
    tau = np.linspace(0, 2, size)
    return {
        "bloch_coherence": (rng.normal(0, 10, 50 * size), rng.uniform(0, 5, 50 * size), 7.65, 0.4),
        "hilbert_direct": (rng.normal(size=4 * size),),
        "convolve_direct": (rng.normal(size=20 * size), np.hanning(41) / np.hanning(41).sum()),
        "mode_sum": (rng.normal(size=(61, 4, 4)) + 1j * rng.normal(size=(61, 4, 4)),
                     -rng.uniform(1, 5, (61, 4)) + 1j * rng.normal(size=(61, 4)), tau),
    }


def best_of(fn, args, repeat: int) -> float:
    timer = timeit.Timer(lambda: fn(*args))
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=number)) / number


WORKLOAD = """
import time, numpy as np
from fewphoton import _kernels, EmitterParams, NoiseModel
from fewphoton.imperfect import g2_imperfect
from fewphoton.reconstruct import kramers_kronig
p = EmitterParams(0.87, 7.65, 0.0, 0.0, -0.26)
nz = NoiseModel(2.07, 4.15, 0.2, {"rr": 0.07})
tau = np.linspace(-3, 3, 601)
w = np.linspace(-80, 80, 4096)
f = 1 / (1 + (w / 3.8) ** 2)
g2_imperfect("tt", 0.0, 1.7, tau, p, nz); kramers_kronig(f, w, method="direct")  # warm-up and compile
t0 = time.perf_counter()
for _ in range(5):
    g2_imperfect("tt", 0.0, 1.7, tau, p, nz, n_nodes=101)
    kramers_kronig(f, w, method="direct")
print(_kernels.HAS_NUMBA, (time.perf_counter() - t0) / 5)
"""


def workload(disable: bool):
    env = dict(os.environ)
    env.pop("FEWPHOTON_DISABLE_NUMBA", None)
    if disable:
        env["FEWPHOTON_DISABLE_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", WORKLOAD], env=env, capture_output=True, text=True, check=True)
    flag, seconds = out.stdout.split()
    return flag == "True", float(seconds)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=1024, help="base problem size")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    if not _kernels.HAS_NUMBA:
        print("numba is unavailable or disabled; only the numpy kernels can be timed")
    data = inputs(args.size, np.random.default_rng(0))
    print(f"{'kernel':<18}{'numpy [ms]':>12}{'numba [ms]':>12}{'speed-up':>10}")
    for name, fn_np in _kernels.numpy_kernels.items():
        t_np = best_of(fn_np, data[name], args.repeat)
        if _kernels.HAS_NUMBA:
            fn_nb = _kernels.numba_kernels[name]
            fn_nb(*data[name])  # compile outside the timing
            t_nb = best_of(fn_nb, data[name], args.repeat)
            print(f"{name:<18}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>10.1f}")
        else:
            print(f"{name:<18}{1e3 * t_np:>12.3f}{'-':>12}{'-':>10}")

    print("\nworkload: imperfect g2 trace (101 nodes) + direct Hilbert transform (4096 points)")
    for disable in (True, False):
        used, seconds = workload(disable)
        label = "numba" if used else "numpy"
        print(f"  FEWPHOTON_DISABLE_NUMBA={'1' if disable else 'unset':<6} -> {label}: {1e3 * seconds:.1f} ms")


if __name__ == "__main__":
    main()
