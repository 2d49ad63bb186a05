"""Time the pure-Python and compiled kernels on the same inputs.

Usage: ``python benchmarks/bench_kernels.py [--repeat N]``
"""
import argparse
import time

import numpy as np

from stackgda import kernels
from stackgda.fisher import generate_market


def _best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def cases():
    rng = np.random.default_rng(0)
    vs = rng.normal(0, 5, (2000, 8))
    ps = rng.uniform(0.1, 5, (2000, 8))

    def dykstra(k):
        for v, p in zip(vs, ps):
            k.budget_dykstra(v, p, 3.0, 1e-10, 10_000)

    mk = generate_market(0, n=5, m=8, utility_class="cobb-douglas")
    T = 500
    p0 = np.random.default_rng(1).uniform(5, 15, mk.m)
    X0 = np.outer(mk.budgets, 1.0 / (mk.m * p0))
    decay = 1.0 / np.sqrt(np.arange(1, T + 1))

    def mbrd(k):
        k.mbrd(mk.code, mk.params, mk.budgets, p0, X0, 3.0 * decay, 1.0 * decay, 1e-3, 0, False, 1e-10, 10_000)

    lin = generate_market(0, n=5, m=8, utility_class="linear")

    def descent(k):
        k.reference_descent(lin.code, lin.params, lin.budgets, np.full(lin.m, 10.0), 20_000, 0.1, 0.0)

    return {"budget_dykstra x2000": dykstra, "mbrd T=500": mbrd, "reference_descent 20k": descent}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = kernels.backends()
    names = sorted(backends)
    print(f"{'kernel':<24}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in cases().items():
        times = {n: _best_of(lambda: fn(backends[n]), args.repeat) for n in names}
        row = f"{label:<24}" + "".join(f"{times[n]:>11.3f}s" for n in names)
        if "cython" in times:
            row += f"{times['python'] / times['cython']:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
