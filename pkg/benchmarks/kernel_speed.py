#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-Python fallback.

Builds seeded random models of increasing size and times, per lane:
batched margin prediction, the per-tree single-change sweep, reachable-leaf
ranges, and the end-to-end single-change search against its brute-force
baseline.

Usage: python benchmarks/kernel_speed.py [--sizes 100,300,1000] [--features 100]
"""

import argparse
import time

import numpy as np

from treevade._core import fallback
from treevade.bench import random_ensemble
from treevade.ensemble import flatten
from treevade.symbolic import best_single_change, brute_force_single_change

try:
    from treevade import _speedups
except ImportError:
    _speedups = None


def best_of(fn, reps=5):
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def fmt(seconds):
    return f"{seconds * 1000:8.2f} ms"


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", default="100,300,1000")
    parser.add_argument("--features", type=int, default=100)
    parser.add_argument("--batch", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    rng = np.random.default_rng(args.seed)
    lanes = [("python", fallback)]
    if _speedups is not None:
        lanes.append(("compiled", _speedups))
    else:
        print("compiled lane not built; showing the fallback only\n")

    for n_trees in sizes:
        model = random_ensemble(rng, n_trees=n_trees, max_depth=4,
                                n_features=args.features)
        flat = flatten(model)
        x = rng.random(args.features)
        X = rng.random((args.batch, args.features))
        lo = np.full(args.features, -np.inf)
        hi = np.full(args.features, np.inf)

        print(f"model: {n_trees} trees, depth <= 4, {args.features} features, "
              f"{flat.n_nodes} nodes")
        for name, lane in lanes:
            t_margin = best_of(lambda: lane.margin_many(flat, X))
            t_tuples = best_of(lambda: lane.single_change_tuples(flat, x))
            t_ranges = best_of(lambda: lane.tree_ranges(flat, lo, hi))
            print(f"  {name:9s} margin_many({args.batch}) {fmt(t_margin)}   "
                  f"single_change_tuples {fmt(t_tuples)}   tree_ranges {fmt(t_ranges)}")

        t_fast = best_of(lambda: best_single_change(model, x), reps=3)
        t_slow = best_of(lambda: brute_force_single_change(model, x), reps=1)
        print(f"  best_single_change {fmt(t_fast)} vs brute force {fmt(t_slow)}"
              f"  ({t_slow / t_fast:.0f}x, active lane)\n")


if __name__ == "__main__":
    main()
