#!/usr/bin/env python3
"""Time the jitted and pure-numpy backends on the package's hot kernels.

The backend is fixed at import time, so each measurement runs in a child
process: once with the default (numba) backend and once with
``DIVSEL_NO_NUMBA=1``. Two workloads are timed:

* ``greedy``  - quality-weighted greedy subset selection (the conditional
  variance / Cholesky-row loop).
* ``scatter`` - the sparse sign-scatter inside the JL sketch.

Usage::

    python3 benchmarks/bench_backends.py            # default sizes
    python3 benchmarks/bench_backends.py -n 10000 -m 1000 -d 256
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def _best_of(repeats, fn):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.monotonic()
        fn()
        best = min(best, time.monotonic() - t0)
    return best


def _worker(args) -> dict:
    from divsel import Budget, DppKernel, KernelSpec, SynthSpec, greedy_map, sparse_jl, synthesize
    from divsel._accel import backend

    import numpy as np

    feats = synthesize(SynthSpec(kind="hypersphere", n=args.n, d=args.d, seed=0))
    kernel = DppKernel(
        features=feats, kernel=KernelSpec(kind="rbf", gamma=1.0, assume_unit_rows=True)
    )
    greedy_map(kernel, Budget(m=min(8, args.m)))  # warm up / JIT
    greedy = _best_of(args.repeats, lambda: greedy_map(kernel, Budget(m=args.m)))

    vec = np.random.default_rng(0).standard_normal(args.dim)
    sparse_jl(vec, args.dout, s=8, seed=0)  # warm up / JIT
    scatter = _best_of(
        args.repeats, lambda: [sparse_jl(vec, args.dout, s=8, seed=0) for _ in range(20)]
    )
    return {"backend": backend(), "greedy_s": greedy, "scatter_s": scatter}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("-n", type=int, default=4000, help="candidate pool size")
    parser.add_argument("-m", type=int, default=400, help="selection budget")
    parser.add_argument("-d", type=int, default=128, help="feature dimension")
    parser.add_argument("--dim", type=int, default=100_000, help="scatter input dim")
    parser.add_argument("--dout", type=int, default=4096, help="scatter output dim")
    parser.add_argument("--repeats", type=int, default=3, help="best-of repeats")
    parser.add_argument("--run-worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.run_worker:
        print(json.dumps(_worker(args)))
        return 0

    results = {}
    for disable in ("", "1"):
        env = dict(os.environ, DIVSEL_NO_NUMBA=disable)
        argv = [sys.executable, os.path.abspath(__file__), "--run-worker",
                "-n", str(args.n), "-m", str(args.m), "-d", str(args.d),
                "--dim", str(args.dim), "--dout", str(args.dout),
                "--repeats", str(args.repeats)]
        out = subprocess.run(argv, env=env, check=True, capture_output=True, text=True)
        row = json.loads(out.stdout.splitlines()[-1])
        results[row["backend"]] = row

    if set(results) != {"numba", "numpy"}:
        print("warning: numba unavailable; both runs used the numpy backend")

    print(f"greedy  n={args.n} m={args.m} d={args.d}; "
          f"scatter dim={args.dim}->{args.dout} (20 calls), best of {args.repeats}")
    print(f"{'backend':<8} {'greedy [s]':>12} {'scatter [s]':>12}")
    for name in ("numba", "numpy"):
        if name in results:
            row = results[name]
            print(f"{name:<8} {row['greedy_s']:>12.4f} {row['scatter_s']:>12.4f}")
    if set(results) == {"numba", "numpy"}:
        for key, label in (("greedy_s", "greedy"), ("scatter_s", "scatter")):
            ratio = results["numpy"][key] / results["numba"][key]
            print(f"{label}: numba is {ratio:.1f}x faster")
    return 0


if __name__ == "__main__":
    sys.exit(main())
