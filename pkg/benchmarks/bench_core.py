"""Compiled core vs numpy fallback on the two hot kernels.

    python3 benchmarks/bench_core.py [--n 200000] [--repeat 5]

Prints best-of-repeat wall time per call, the speedup, and the max
difference between the two backends' outputs.
"""
import argparse
import time

import numpy as np

from clkinetic import _core_py, geometry

try:
    from clkinetic import _core
except ImportError:
    _core = None


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def exit_args(n, rng):
    dom = geometry.quartic_test_domain()
    x = rng.uniform(-0.5, 0.5, (n, 3))
    v = rng.standard_normal((n, 3))
    gc = [g.coef for g in dom.grad_polys]
    gp = [g.powers for g in dom.grad_polys]
    return (dom.xi_poly.coef, dom.xi_poly.powers, gc, gp, x, v, dom.bounding_radius,
            geometry.TOL)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=200000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    y = np.concatenate([rng.uniform(0, 30, args.n // 2), rng.uniform(30, 1e4, args.n - args.n // 2)])
    ea = exit_args(args.n // 10, rng)
    cases = [("i0e", lambda m: m.i0e(y), args.n),
             ("poly_exit", lambda m: m.poly_exit(*ea)[0], args.n // 10)]
    print(f"{'kernel':<10} {'n':>8} {'python s':>10} {'cython s':>10} {'speedup':>8} {'max diff':>10}")
    for name, fn, n in cases:
        tp, op = best_time(lambda: fn(_core_py), args.repeat)
        if _core is None:
            print(f"{name:<10} {n:>8} {tp:>10.4f} {'n/a':>10} {'n/a':>8} {'n/a':>10}")
            continue
        tc, oc = best_time(lambda: fn(_core), args.repeat)
        diff = float(np.max(np.abs(np.asarray(op) - np.asarray(oc))))
        print(f"{name:<10} {n:>8} {tp:>10.4f} {tc:>10.4f} {tp / tc:>8.1f} {diff:>10.2e}")


if __name__ == "__main__":
    main()
