"""Time the numba and numpy kernel backends side by side.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--sizes 10000 100000]

Also times a full k-means fit through each backend.  Results are checked
for agreement before any timing is reported.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from idsframe import _kernels as K
from idsframe import cluster


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(n: int, dim: int, k: int, rng: np.random.Generator):
    X = rng.uniform(size=(n, dim))
    centers = X[rng.choice(n, k, replace=False)].copy()
    labels = rng.integers(0, k, size=n)
    scores = np.round(rng.uniform(size=n), 3)
    order = np.argsort(-scores, kind="mergesort")
    truth = rng.integers(0, 2, size=n)
    return {
        "assign_labels": lambda impl: impl[0](X, centers),
        "update_centers": lambda impl: impl[1](X, labels, centers),
        "roc_counts": lambda impl: impl[2](scores[order], truth[order]),
    }


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def fit_with(backend: str, X: np.ndarray, k: int) -> cluster.ClusterModel:
    saved = K.BACKEND
    K.BACKEND = backend
    try:
        return cluster.fit_kmeans(X, k, seed=0)
    finally:
        K.BACKEND = saved


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", type=int, nargs="+", default=[10_000, 100_000])
    ap.add_argument("--dim", type=int, default=41)
    ap.add_argument("--k", type=int, default=8)
    args = ap.parse_args(argv)
    if not K.HAS_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(0)
    numba_impl, numpy_impl = K._TABLE["numba"], K._TABLE["numpy"]
    print(f"{'kernel':<16}{'rows':>9}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}")
    for n in args.sizes:
        for name, call in kernel_cases(n, args.dim, args.k, rng).items():
            if not _same(call(numpy_impl), call(numba_impl)):  # also triggers compilation
                raise SystemExit(f"{name}: backends disagree at n={n}")
            t_np = best_of(lambda: call(numpy_impl), args.repeat)
            t_nb = best_of(lambda: call(numba_impl), args.repeat)
            print(f"{name:<16}{n:>9}{1e3 * t_np:>11.2f}{1e3 * t_nb:>11.2f}{t_np / t_nb:>8.1f}x")

    for n in args.sizes:
        X = rng.uniform(size=(n, args.dim))
        a, b = fit_with("numpy", X, args.k), fit_with("numba", X, args.k)
        if not np.array_equal(a.assignments, b.assignments):
            raise SystemExit(f"fit_kmeans: backends disagree at n={n}")
        t_np = best_of(lambda: fit_with("numpy", X, args.k), max(1, args.repeat // 2))
        t_nb = best_of(lambda: fit_with("numba", X, args.k), max(1, args.repeat // 2))
        print(f"{'fit_kmeans':<16}{n:>9}{1e3 * t_np:>11.1f}{1e3 * t_nb:>11.1f}{t_np / t_nb:>8.1f}x"
              f"   ({a.n_iter} iterations)")


if __name__ == "__main__":
    main()
