"""Compiled vs pure-Python extra-trees kernels on a dispatch-training workload.

    python benchmarks/bench_forest.py [--samples 1000] [--trees 10] [--repeat 3]

Fits and predicts with every available backend on the same data and checks
that the forests agree bit for bit.
"""
import argparse
import time

import numpy as np

from dhwflex import forest as xt
from dhwflex.rl import encode


def workload(n, seed):
    # same shape as one Q-iteration step: cyclic time features, temperature, action
    r = np.random.default_rng(seed)
    q = r.integers(1, 97, n)
    temp = r.uniform(45, 85, n)
    u = r.integers(0, 2, n)
    X = encode(q, temp, u, "cyclic")
    y = 0.003 * u - 3e-4 * (temp > 50) + 0.01 * np.sin(temp / 7.0) + r.normal(0, 1e-3, n)
    return X, y


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=1000)
    ap.add_argument("--trees", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    X, y = workload(args.samples, 0)
    params = xt.ForestParams(n_trees=args.trees, rng_seed=1)
    results = {}
    print(f"{'backend':<8}{'fit [ms]':>12}{'predict [ms]':>14}{'nodes':>8}")
    for backend in xt.available_backends():
        t_fit, forest = best_of(lambda: xt.fit(X, y, params, backend=backend), args.repeat)
        t_pred, pred = best_of(lambda: forest.predict(X), args.repeat)
        results[backend] = (t_fit, t_pred, forest.to_bytes(), pred)
        print(f"{backend:<8}{1e3 * t_fit:>12.2f}{1e3 * t_pred:>14.2f}{forest.n_nodes:>8}")
    if {"cython", "python"} <= set(results):
        c, p = results["cython"], results["python"]
        print(f"speed-up: fit x{p[0] / c[0]:.1f}, predict x{p[1] / c[1]:.1f}")
        print("identical forests:", c[2] == p[2] and np.array_equal(c[3], p[3]))
    else:
        print("compiled backend not built; only the fallback was timed")


if __name__ == "__main__":
    main()
