"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_backends.py [--repeat 5] [--n 400]

Each workload runs once per backend to warm up (numba compiles on first
call), then the best of ``--repeat`` runs is reported.  The exact stump round
is quadratic in n, so keep n modest for the numpy path.
"""
import argparse
import time

import numpy as np

from robust_boosting._backend import _numba_available, use_backend
from robust_boosting.stumps import Stump, StumpBooster, StumpEnsemble, certify_stumps_batch
from robust_boosting.trees import TreeBooster, TreeEnsemble, certify_trees_batch


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads(n, rng):
    d = 10
    X = rng.random((n, d))
    y = np.where(X[:, 0] + X[:, 1] - X[:, 2] + 0.2 * rng.standard_normal(n) > 0.5, 1.0, -1.0)
    stumps = StumpEnsemble([Stump(int(rng.integers(d)), float(rng.random()), float(rng.normal()),
                                  float(rng.normal())) for _ in range(300)], n_features=d)
    warm = TreeBooster(X, y, 0.05, max_depth=4)
    for _ in range(20):
        warm.step()
    trees: TreeEnsemble = warm.ensemble

    def stump_round():
        b = StumpBooster(X, y, 0.05, ensemble=stumps)
        b.step()

    def tree_round():
        b = TreeBooster(X, y, 0.05, max_depth=4, ensemble=trees)
        b.step()

    return [
        ("certify 300 stumps", lambda: certify_stumps_batch(stumps, X, y, 0.05)),
        ("tree bound, 20 trees", lambda: certify_trees_batch(trees, X, y, 0.05)),
        ("exact stump round (T=300)", stump_round),
        ("robust tree round (depth 4)", tree_round),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n", type=int, default=400)
    args = ap.parse_args()
    names = ["numpy"] + (["numba"] if _numba_available() else [])
    results = {}
    for name in names:
        with use_backend(name):
            for label, fn in workloads(args.n, np.random.default_rng(0)):
                results.setdefault(label, {})[name] = best_of(fn, args.repeat)
    print(f"n={args.n}, best of {args.repeat}")
    print(f"{'workload':30s}" + "".join(f"{n:>12s}" for n in names) + "     speedup")
    for label, row in results.items():
        line = f"{label:30s}" + "".join(f"{1000 * row[n]:10.2f}ms" for n in names)
        if len(names) == 2:
            line += f"  {row['numpy'] / row['numba']:8.1f}x"
        print(line)


if __name__ == "__main__":
    main()
