"""Time the compiled and pure-Python coordinate-descent kernels.

Usage::

    python3 benchmarks/bench_cd.py [--repeats 3]

Each case solves one weighted elastic-net subproblem from a cold start with
both kernels, checks that the solutions agree, and reports the best wall time.
"""

import argparse
import time

import numpy as np

from coenet._kernels import get_kernel

CASES = [(100, 200), (100, 1000), (88, 2114)]


def make_case(n, p, seed=0):
    rng = np.random.default_rng(seed)
    X = np.asfortranarray(rng.standard_normal((n, p)))
    beta = np.zeros(p)
    beta[:10] = rng.normal(0, 1, 10)
    w = rng.uniform(0.1, 0.25, n)
    r = X @ beta + rng.standard_normal(n)
    xwx = w @ X**2
    # penalty near the middle of a typical path: a handful of active features
    lmax = np.max(np.abs(X.T @ (w * r)))
    return X, w, r, np.full(p, 0.3 * lmax), np.full(p, 0.1), xwx


def run(kernel, case, repeats):
    X, w, r0, l1, l2, xwx = case
    best, out = np.inf, None
    for _ in range(repeats):
        r, beta = r0.copy(), np.zeros(X.shape[1])
        t = time.perf_counter()
        sweeps = kernel(X, w, r, beta, l1, l2, xwx, 1e-10, 100_000)
        best = min(best, time.perf_counter() - t)
        out = (beta, sweeps)
    return best, out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args(argv)
    compiled, python = get_kernel("cython"), get_kernel("python")
    print(f"{'n':>5} {'p':>6} {'active':>7} {'sweeps':>7} {'cython s':>10} {'python s':>10} {'speedup':>8}")
    for n, p in CASES:
        case = make_case(n, p)
        tc, (bc, sweeps) = run(compiled, case, args.repeats)
        tp, (bp, _) = run(python, case, args.repeats)
        if np.max(np.abs(bc - bp)) > 1e-8:
            raise SystemExit(f"kernels disagree at n={n}, p={p}")
        print(f"{n:>5} {p:>6} {np.count_nonzero(bc):>7} {sweeps:>7} {tc:>10.4f} {tp:>10.4f} {tp / tc:>7.0f}x")


if __name__ == "__main__":
    main()
