"""Compiled vs pure-Python kernels, plus one end-to-end penalized fit under
each backend.

    python benchmarks/bench_kernels.py [--repeat 5] [--no-fit]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from icbar import _pykernels

try:
    from icbar import _kernels
except ImportError:
    _kernels = None

FIT_SNIPPET = """
import time
from icbar import emcore, kernels, penalty, simgen, solver
sc = simgen.table1_scenario(n=200, seed=1)
problem = emcore.Problem(simgen.gen_dataset(sc, 0), sc.specs)
init = solver.fit_unpenalized(problem)
t = time.perf_counter()
for tau in (2.0, 8.0):
    solver.fit_penalized(problem, config=solver.FitConfig(penalty=penalty.LASSO(), tau=tau), init=init)
print(kernels.BACKEND, time.perf_counter() - t)
"""


def shooting_case(p, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(2 * p, p))
    Q = A.T @ A / (2 * p) + 0.05 * np.eye(p)
    c = rng.normal(size=p)
    pen = np.full(p, 0.1)
    return Q, c, pen, np.zeros(p)


def best_of(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.2:
        number *= 2
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-fit", action="store_true", help="skip the end-to-end fits")
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1

    print(f"{'kernel':<24}{'python (s)':>14}{'cython (s)':>14}{'speedup':>10}")
    for p in (28, 56, 112):
        Q, c, pen, b0 = shooting_case(p)
        py = best_of(lambda: _pykernels.shooting(Q, c, pen, b0, 1e-8, 10_000), args.repeat)
        cy = best_of(lambda: _kernels.shooting(Q, c, pen, b0, 1e-8, 10_000), args.repeat)
        print(f"{'shooting p=' + str(p):<24}{py:>14.3e}{cy:>14.3e}{py / cy:>10.1f}")
    for m in (200, 2000):
        a = np.random.default_rng(1).random((2, m))
        py = best_of(lambda: _pykernels.revcumsum(a, 1), args.repeat)
        cy = best_of(lambda: _kernels.revcumsum(a, 1), args.repeat)
        print(f"{'revcumsum m=' + str(m):<24}{py:>14.3e}{cy:>14.3e}{py / cy:>10.1f}")

    if not args.no_fit:
        times = {}
        for flag in ("1", "0"):
            env = dict(os.environ, ICBAR_PURE_PYTHON=flag)
            out = subprocess.run([sys.executable, "-c", FIT_SNIPPET], env=env, capture_output=True, text=True,
                                 check=True).stdout.split()
            times[out[0]] = float(out[1])
        py, cy = times["python"], times["cython"]
        print(f"{'LASSO fits n=200':<24}{py:>14.3e}{cy:>14.3e}{py / cy:>10.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
