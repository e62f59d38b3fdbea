"""Timing comparison of the convolution kernel backends.

Runs gather (forward correlation), scatter (zero-stuffed adjoint), and
weight_grad on each available backend across a few problem sizes and prints
the per-call medians plus the speedup of the compiled path over numpy.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from attgan3d import kernels

# (label, x shape, w shape, stride, pad)
CASES = [
    ("shallow 3x3x3", (1, 1, 5, 32, 32), (16, 1, 3, 3, 3), (1, 1, 1), (1, 1, 1)),
    ("block 3x3x3", (1, 16, 5, 32, 32), (16, 16, 3, 3, 3), (1, 1, 1), (1, 1, 1)),
    ("ladder 3x3 s2", (2, 32, 1, 64, 64), (64, 32, 1, 3, 3), (1, 2, 2), (0, 1, 1)),
    ("gate 3x7x7", (1, 2, 5, 32, 32), (1, 2, 3, 7, 7), (1, 1, 1), (1, 3, 3)),
]


def out_dims(x_shape, w_shape, stride, pad):
    return tuple(
        (x_shape[2 + i] + 2 * pad[i] - w_shape[2 + i]) // stride[i] + 1
        for i in range(3))


def time_call(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench_case(label, x_shape, w_shape, stride, pad, repeats):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(x_shape).astype(np.float32)
    w = rng.standard_normal(w_shape).astype(np.float32)
    od = out_dims(x_shape, w_shape, stride, pad)
    g = rng.standard_normal((x_shape[0], w_shape[0]) + od).astype(np.float32)

    rows = {}
    for backend in kernels.available_backends():
        prev = kernels.use_backend(backend)
        try:
            kernels.gather(x, w, stride, pad, od)  # warm up
            rows[backend] = (
                time_call(lambda: kernels.gather(x, w, stride, pad, od), repeats),
                time_call(lambda: kernels.scatter(g, w, stride, pad, x_shape[2:]),
                          repeats),
                time_call(lambda: kernels.weight_grad(g, x, stride, pad,
                                                      w_shape[2:]), repeats),
            )
        finally:
            kernels.use_backend(prev)
    return label, rows


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}")
    header = f"{'case':<16}{'backend':<10}{'gather':>12}{'scatter':>12}{'wgrad':>12}"
    print(header)
    print("-" * len(header))
    for case in CASES:
        label, rows = bench_case(*case, repeats=args.repeats)
        for backend, (tg, ts, tw) in rows.items():
            print(f"{label:<16}{backend:<10}"
                  f"{tg * 1e3:>10.2f}ms{ts * 1e3:>10.2f}ms{tw * 1e3:>10.2f}ms")
        if "cython" in rows and "numpy" in rows:
            speedups = [n / c for n, c in zip(rows["numpy"], rows["cython"])]
            print(f"{'':<16}{'speedup':<10}"
                  f"{speedups[0]:>11.1f}x{speedups[1]:>11.1f}x{speedups[2]:>11.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
