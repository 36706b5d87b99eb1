"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/compare_kernels.py [--sizes 1000,100000,4000000] [--repeat 5]

Prints one row per (kernel, size) with the best-of-N time of each backend
and the speedup. Sizes that fit in cache favour the compiled loop; large
arrays are memory bound and the two converge.
"""

import argparse
import time

import numpy as np

from nodeperf.bench import _fallback

try:
    from nodeperf.bench import _kernels
except ImportError:  # extension not built
    _kernels = None


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(n, iterations):
    a = np.zeros(n)
    b = np.ones(n)
    c = np.full(n, 2.0)
    return {
        "copy": lambda impl: impl.copy(a, b, 0, n, iterations),
        "triad": lambda impl: impl.triad(a, b, c, 3.0, 0, n, iterations),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", default="1000,100000,4000000")
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--work", type=float, default=2e7, help="elements touched per timing (sets iterations)")
    args = p.parse_args()

    if _kernels is None:
        print("compiled kernels not built; only the fallback is available")
    print(f"{'kernel':<6} {'elements':>10} {'iters':>6} {'numpy [s]':>11} {'cython [s]':>11} {'speedup':>8}")
    for n in (int(s) for s in args.sizes.split(",")):
        iterations = max(1, int(args.work // n))
        for name, run in cases(n, iterations).items():
            t_np = best_of(lambda: run(_fallback), args.repeat)
            if _kernels is None:
                print(f"{name:<6} {n:>10} {iterations:>6} {t_np:>11.4g} {'-':>11} {'-':>8}")
                continue
            t_cy = best_of(lambda: run(_kernels), args.repeat)
            print(f"{name:<6} {n:>10} {iterations:>6} {t_np:>11.4g} {t_cy:>11.4g} {t_np / t_cy:>7.2f}x")


if __name__ == "__main__":
    main()
