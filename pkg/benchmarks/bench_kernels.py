"""Compiled vs pure-Python kernels: concordance counting, Cox loss/grad, patch entropy.

    python benchmarks/bench_kernels.py [--sizes 1000 10000] [--repeat 5]

Prints one row per (kernel, size) with the best-of-N time for each backend,
the speedup, and whether the two backends agree.
"""

import argparse
import time

import numpy as np

from evoqformer._kernels import backend_module


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(n, rng):
    eta = np.round(rng.normal(size=n), 2)
    _, rank = np.unique(eta, return_inverse=True)
    time_ = rng.integers(1, n // 4 + 2, n).astype(float)
    event = (rng.random(n) > 0.3).astype(np.uint8)
    order = np.argsort(-time_, kind="stable")
    r, t, e, x = (np.ascontiguousarray(a[order]) for a in (rank.astype(np.int64), time_, event, eta))
    n_ranks = int(rank.max()) + 1
    patches = rng.integers(0, 256, (max(1, n // 1000), 224 * 224)).astype(np.uint8)
    return {
        "concordance_counts": lambda k: k.concordance_counts(r, t, e, n_ranks),
        "cox_loss_grad": lambda k: k.cox_loss_grad(x, t, e),
        "histogram_entropy": lambda k: [k.histogram_entropy(p) for p in patches],
    }


def agree(a, b):
    if isinstance(a, tuple) and len(a) == 2 and isinstance(a[1], np.ndarray):
        return np.isclose(a[0], b[0], rtol=1e-12) and np.allclose(a[1], b[1], rtol=1e-12, atol=1e-14)
    return np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rtol=1e-12)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1000, 10000, 50000])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    c, py = backend_module("cython"), backend_module("python")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'n':>8}{'cython ms':>12}{'python ms':>12}{'speedup':>10}  agree")
    for n in args.sizes:
        for name, fn in cases(n, rng).items():
            tc, oc = best_of(lambda: fn(c), args.repeat)
            tp, op = best_of(lambda: fn(py), max(1, args.repeat // 2))
            print(f"{name:<20}{n:>8}{tc * 1e3:>12.3f}{tp * 1e3:>12.3f}{tp / tc:>9.1f}x  {agree(oc, op)}")


if __name__ == "__main__":
    main()
