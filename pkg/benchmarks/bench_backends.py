"""Time Poisson count sampling on the compiled and pure-Python backends.

    python benchmarks/bench_backends.py [--cells 2000] [--reps 20000]
"""
import argparse
import time

import numpy as np

from poissonstein import _backend
from poissonstein.simulate import sample_counts
from poissonstein.space import DiscreteSpace


def bench(space, reps, backend, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        batch = sample_counts(space, reps, seed=1, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, batch.counts


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cells", type=int, default=2000)
    ap.add_argument("--reps", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    # mostly small cell weights as in the OU grids, plus a few heavy cells
    weights = np.concatenate([rng.uniform(0.05, 0.5, args.cells - 10), rng.uniform(5, 40, 10)])
    space = DiscreteSpace(weights)
    print(f"cells={args.cells} reps={args.reps} available={sorted(_backend.BACKENDS)}")
    results = {}
    for name in sorted(_backend.BACKENDS):
        secs, counts = bench(space, args.reps, name, args.repeat)
        results[name] = counts
        rate = args.cells * args.reps / secs / 1e6
        print(f"{name:>9}: {secs:8.3f} s  ({rate:7.1f} M counts/s)")
    if len(results) == 2:
        a, b = results.values()
        print("identical counts:", bool(np.array_equal(a, b)))


if __name__ == "__main__":
    main()
