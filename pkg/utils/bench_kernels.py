#!/usr/bin/env python3
"""
Benchmark the geometry kernels (knn, chamfer, fps) and print ops/sec
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import argparse
import time

import numpy as np

from core.geometry import chamfer_l1, fps, knn

BENCH_OPS = ('knn', 'chamfer', 'fps')
KNN_K = 16
MIN_SECONDS = 0.5
MIN_REPEATS = 3


def make_kernel(op: str, n: int, seed: int = 0):
    """A zero-argument callable running `op` once on random clouds of `n` points"""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    rng = np.random.default_rng(seed)
    a = rng.uniform(-0.5, 0.5, size=(n, 3))
    b = rng.uniform(-0.5, 0.5, size=(n, 3))
    if op == 'knn':
        k = min(KNN_K, n)
        return lambda: knn(a, b, k)
    if op == 'chamfer':
        return lambda: chamfer_l1(a, b)
    if op == 'fps':
        m = max(1, n // 4)
        return lambda: fps(a, m)
    raise ValueError(f"Unknown op '{op}', choose from {BENCH_OPS}")


def run_bench(op: str, n: int, seed: int = 0) -> float:
    """Operations per second of `op` on `n`-point clouds"""
    kernel = make_kernel(op, n, seed)
    kernel()  # warm-up
    repeats = 0
    start = time.perf_counter()
    while True:
        kernel()
        repeats += 1
        elapsed = time.perf_counter() - start
        if repeats >= MIN_REPEATS and elapsed >= MIN_SECONDS:
            break
    ops = repeats / elapsed
    print(f"[+] {op} n={n}: {ops:.2f} ops/sec ({repeats} runs in {elapsed:.2f}s)")
    return ops


def main(argv=None):
    parser = argparse.ArgumentParser(description='Benchmark the geometry kernels')
    parser.add_argument('--op', choices=BENCH_OPS, default='knn')
    parser.add_argument('--n', type=int, default=4096)
    args = parser.parse_args(argv)
    run_bench(args.op, args.n)


if __name__ == "__main__":
    main()
