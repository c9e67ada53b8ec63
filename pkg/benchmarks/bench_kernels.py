"""Benchmark the compiled nondominated-sorting kernel against the pure
numpy fallback.

Usage: python benchmarks/bench_kernels.py [--sizes 500,2000,4000] [--reps 5]
"""

import argparse
import time

import numpy as np

from hwnas import _ops_py, kernels


def _time(fn, pts, reps):
    best = float("inf")
    for _ in range(reps):
        start = time.perf_counter()
        fn(pts)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", default="500,1000,2000,4000")
    parser.add_argument("--objectives", type=int, default=3)
    parser.add_argument("--reps", type=int, default=5)
    args = parser.parse_args()

    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.default_rng(0)

    print(f"active backend: {kernels.BACKEND}")
    print(f"{'n':>6} {'python (ms)':>12} {'active (ms)':>12} {'speedup':>8}")
    for n in sizes:
        pts = np.ascontiguousarray(rng.random((n, args.objectives)))
        assert np.array_equal(kernels.nondominated_rank(pts),
                              _ops_py.nondominated_rank(pts))
        t_py = _time(_ops_py.nondominated_rank, pts, args.reps)
        t_active = _time(kernels.nondominated_rank, pts, args.reps)
        print(f"{n:>6} {t_py * 1e3:>12.2f} {t_active * 1e3:>12.2f} "
              f"{t_py / t_active:>8.2f}x")


if __name__ == "__main__":
    main()
