"""Compare the compiled DTW kernel against the pure-Python fallback.

Usage: python benchmarks/bench_dtw.py [--sizes 100,200,400]
"""

import argparse
import time

import numpy as np

from sponspeech.evaluation import HAVE_COMPILED_DTW, dtw_path_python

try:
    from sponspeech.evaluation._dtw_core import dtw_path as dtw_path_compiled
except ImportError:
    dtw_path_compiled = None


def bench(fn, cost, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(cost)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", default="100,200,400,800")
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    rng = np.random.default_rng(0)
    print(f"compiled kernel available: {HAVE_COMPILED_DTW}")
    print(f"{'size':>6} {'python':>12} {'compiled':>12} {'speedup':>9}")
    for n in sizes:
        cost = rng.uniform(0, 4, size=(n, n + n // 8))
        t_py = bench(dtw_path_python, cost, args.repeats)
        if dtw_path_compiled is None:
            print(f"{n:>6} {t_py * 1e3:>10.1f}ms {'-':>12} {'-':>9}")
            continue
        t_c = bench(dtw_path_compiled, cost, args.repeats)
        path_p, cost_p = dtw_path_python(cost)
        path_c, cost_c = dtw_path_compiled(cost)
        assert cost_p == cost_c and np.array_equal(path_p, path_c)
        print(f"{n:>6} {t_py * 1e3:>10.1f}ms {t_c * 1e3:>10.2f}ms {t_py / t_c:>8.1f}x")


if __name__ == "__main__":
    main()
