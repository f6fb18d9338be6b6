"""Compare the numba and numpy kernel backends.

Usage::

    python benchmarks/bench_kernels.py [--repeats 5]

Both backends are imported directly, so one process times both. numba
compilation happens in an untimed warm-up call.
"""

import argparse
import time

import numpy as np

from wbcov.kernels import _numba, _numpy
from wbcov.rulers import best_ruler


def best_of(fn, repeats):
    fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases():
    rng = np.random.default_rng(0)
    marks = np.asarray(best_ruler(25, 199).marks, np.int64)
    c = 199
    C = rng.standard_normal((16, 25, 25)) + 1j * rng.standard_normal((16, 25, 25))
    t = rng.uniform(-8, 8, 200_000)
    P = rng.standard_normal((400, 8))
    Z = rng.standard_normal((100, 8)) + 1j * rng.standard_normal((100, 8))
    return {
        "lag_counts (25 marks)": lambda k: k.lag_counts(marks, 199),
        "lag_average (16 x 25 x 25)": lambda k: k.lag_average(C, marks, c, True),
        "raised_cosine (2e5 points)": lambda k: k.raised_cosine(t, 1.0, 0.25),
        "delay_objective (400 x 100)": lambda k: k.delay_objective(P, Z),
        "perfect_diffset_search (q=7)": lambda k: k.perfect_diffset_search(57, 8),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=5)
    args = p.parse_args(argv)
    print(f"{'kernel':32s} {'numpy [ms]':>12s} {'numba [ms]':>12s} {'speed-up':>9s}")
    for name, call in cases().items():
        t_np = best_of(lambda: call(_numpy), args.repeats)
        t_nb = best_of(lambda: call(_numba), args.repeats)
        print(f"{name:32s} {1e3 * t_np:12.3f} {1e3 * t_nb:12.3f} {t_np / t_nb:9.1f}")


if __name__ == "__main__":
    main()
