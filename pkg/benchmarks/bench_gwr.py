"""Compiled vs pure-Python GWR kernels.

Times the BMU scan on its own at several memory sizes, then a full streaming
run through ``GwrMemory`` with each backend selected at import.

    python benchmarks/bench_gwr.py [--dim 50] [--repeat 5]
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from affmem import _gwr_fallback

try:
    from affmem import _gwr_kernels
except ImportError:
    _gwr_kernels = None

STREAM = """
import time, numpy as np
from affmem import gwr
rng = np.random.default_rng(0)
X = rng.normal(size=({n}, {dim}))
Y = rng.uniform(-1, 1, ({n}, 2))
mem = gwr.GwrMemory.from_two(X[0], X[1], labels=(Y[0], Y[1]))
t = time.perf_counter()
mem.train_epochs(X, Y, epochs={epochs})
print(gwr.BACKEND, time.perf_counter() - t, len(mem))
"""


def bench_bmu(dim: int, repeat: int) -> None:
    print(f"BMU scan, dim={dim} (best of {repeat}, microseconds per call)")
    print(f"{'neurons':>8} {'python':>10} {'compiled':>10} {'speedup':>8}")
    rng = np.random.default_rng(0)
    for n in (16, 64, 256, 1024):
        W = np.ascontiguousarray(rng.normal(size=(n, dim)))
        x = rng.normal(size=dim)
        number = max(1, 20000 // n)
        py = min(timeit.repeat(lambda: _gwr_fallback.bmu2(W, n, x), number=number, repeat=repeat)) / number
        if _gwr_kernels is None:
            print(f"{n:>8} {py * 1e6:>10.2f} {'n/a':>10}")
            continue
        assert _gwr_kernels.bmu2(W, n, x) == _gwr_fallback.bmu2(W, n, x)
        c = min(timeit.repeat(lambda: _gwr_kernels.bmu2(W, n, x), number=number, repeat=repeat)) / number
        print(f"{n:>8} {py * 1e6:>10.2f} {c * 1e6:>10.2f} {py / c:>7.1f}x")


def bench_stream(dim: int, n: int, epochs: int) -> None:
    print(f"\nGwrMemory.train_epochs, {n} samples x {epochs} epochs, dim={dim}")
    code = STREAM.format(n=n, dim=dim, epochs=epochs)
    times = {}
    for pure in (True, False):
        env = {k: v for k, v in os.environ.items() if k != "AFFMEM_PURE_PYTHON"}
        if pure:
            env["AFFMEM_PURE_PYTHON"] = "1"
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, secs, size = out.stdout.split()
        times[backend] = float(secs)
        print(f"{backend:>9}: {float(secs):.3f}s ({size} neurons)")
    if len(times) == 2:
        print(f"  speedup: {times['python'] / times['compiled']:.1f}x")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--samples", type=int, default=500)
    ap.add_argument("--epochs", type=int, default=10)
    args = ap.parse_args()
    bench_bmu(args.dim, args.repeat)
    bench_stream(args.dim, args.samples, args.epochs)


if __name__ == "__main__":
    main()
