#!/usr/bin/env python
"""Benchmark the numba and numpy backward/forward sweep kernels.

Usage:
    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --sizes 20 100 500 --repeat 50
    python benchmarks/bench_kernels.py --output results.json
"""
import argparse
import json
import time

import numpy as np

from windcap._kernels import NUMBA_AVAILABLE, bfs_sweep


def random_feeder(n, seed=0):
    """Random radial tree in topological order with light loading."""
    rng = np.random.default_rng(seed)
    parent = np.array([-1] + [int(rng.integers(0, k)) for k in range(1, n)], dtype=np.int64)
    r = rng.uniform(0.001, 0.01, n)
    x = rng.uniform(0.001, 0.02, n)
    p = rng.uniform(0.0, 1.0 / n, n)
    q = rng.uniform(-0.5 / n, 0.5 / n, n)
    return parent, r, x, p, q


def time_backend(backend, args, repeat):
    bfs_sweep(*args, backend=backend)  # warm-up (and JIT compile)
    t0 = time.perf_counter()
    for _ in range(repeat):
        out = bfs_sweep(*args, backend=backend)
    return (time.perf_counter() - t0) / repeat, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[20, 100, 500])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--output", help="write results as JSON")
    args = ap.parse_args()

    results = []
    print(f"{'nodes':>6s} {'numpy [ms]':>12s} {'numba [ms]':>12s} {'speedup':>8s} {'max |dv|':>10s}")
    for n in args.sizes:
        parent, r, x, p, q = random_feeder(n)
        kargs = (parent, r, x, p, q, 1.0, np.zeros(n), 1e-10, 100)
        t_np, out_np = time_backend("numpy", kargs, args.repeat)
        row = {"nodes": n, "numpy_s": t_np}
        if NUMBA_AVAILABLE:
            t_nb, out_nb = time_backend("numba", kargs, args.repeat)
            dv = float(np.max(np.abs(out_np[0] - out_nb[0])))
            row.update(numba_s=t_nb, speedup=t_np / t_nb, max_dv=dv)
            print(f"{n:6d} {1e3 * t_np:12.3f} {1e3 * t_nb:12.3f} {t_np / t_nb:8.1f} {dv:10.2e}")
        else:
            print(f"{n:6d} {1e3 * t_np:12.3f} {'n/a':>12s}")
        results.append(row)
    if args.output:
        with open(args.output, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
