"""Benchmark the metric suite under the compiled and numpy kernel backends.

Usage::

    python3 benchmarks/bench_metrics.py [--sizes 32 64 128] [--repeats 5]

Larger sizes widen the gap but the numpy fallback gets slow: the
nearest-foreground search is O(n_background * n_foreground) by design
(exact integer tie handling keeps both backends bit-for-bit comparable).

The threshold sweeps behind the F/E measures and the nearest-foreground
search behind the weighted F-measure are the suite's hot loops; this script
times the full seven-metric evaluation per image under each available
backend and reports the speedup.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from depthcod import metrics
from depthcod.metrics._dispatch import available_backends, use_backend


def _make_pair(rng: np.random.Generator, size: int):
    pred = rng.uniform(size=(size, size))
    ys, xs = np.mgrid[0:size, 0:size]
    cy, cx = rng.uniform(size * 0.3, size * 0.7, size=2)
    r = rng.uniform(size * 0.15, size * 0.35)
    gt = (((ys - cy) ** 2 + (xs - cx) ** 2) <= r * r).astype(np.float64)
    return pred, gt


def bench(size: int, repeats: int, backend: str) -> float:
    rng = np.random.default_rng(42)
    pairs = [_make_pair(rng, size) for _ in range(repeats)]
    with use_backend(backend):
        metrics.compute_all(*pairs[0])  # warm up
        start = time.perf_counter()
        for pred, gt in pairs:
            metrics.compute_all(pred, gt)
        elapsed = time.perf_counter() - start
    return elapsed / repeats


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    backends = available_backends()
    print(f"available backends: {', '.join(backends)} (default: {metrics.backend_name()})")
    header = f"{'size':>6} | " + " | ".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += " | speedup"
    print(header)
    print("-" * len(header))
    for size in args.sizes:
        times = {b: bench(size, args.repeats, b) for b in backends}
        row = f"{size:>6} | " + " | ".join(f"{times[b] * 1e3:>9.1f} ms" for b in backends)
        if "compiled" in times and "numpy" in times:
            row += f" | {times['numpy'] / times['compiled']:.2f}x"
        print(row)

    # Cross-check: both backends must agree on the same inputs.
    if len(backends) == 2:
        rng = np.random.default_rng(7)
        pred, gt = _make_pair(rng, 64)
        with use_backend("compiled"):
            a = metrics.compute_all(pred, gt)
        with use_backend("numpy"):
            b = metrics.compute_all(pred, gt)
        worst = max(abs(a[k] - b[k]) for k in a)
        print(f"max backend disagreement on a 64x64 probe: {worst:.2e}")


if __name__ == "__main__":
    main()
