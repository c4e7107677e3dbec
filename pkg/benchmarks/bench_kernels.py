"""Timing comparison of the compiled and numpy convolution backends.

Runs the three hot kernels (forward conv, weight gradient, input
gradient) plus the bilinear gather over a few training-representative
shapes and prints the median per-call time for each backend. The
compiled backend parallelizes over images x channels with OpenMP, so
its relative standing depends on the machine; single-core boxes tend
to favor whichever side the BLAS build is better tuned for.

Usage: python3 benchmarks/bench_kernels.py [--reps N]
"""

import argparse
import os
import statistics
import time

import numpy as np

from paonkit.kernels import numpy_backend

try:
    from paonkit.kernels import _ckernels
except ImportError:
    _ckernels = None

# (label, batch, c_in, c_out, h, kernel, stride)
SHAPES = [
    ("sr-block 16ch 32px", 4, 16, 16, 32, 3, 1),
    ("sr-head 3->16 64px", 4, 3, 16, 64, 3, 1),
    ("cls-stage 32ch 16px", 8, 32, 32, 16, 3, 1),
    ("cls-down s2 16->32", 8, 16, 32, 16, 3, 2),
    ("wide k5 3ch 128px", 1, 3, 3, 128, 5, 1),
]


def median_ms(fn, reps):
    fn()  # warmup also triggers any lazy allocation
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def bench_backend(mod, x, w, gy, k, stride, reps):
    h = x.shape[2]
    return (
        median_ms(lambda: mod.conv2d_valid(x, w, stride), reps),
        median_ms(lambda: mod.conv2d_valid_grad_weight(x, gy, k, stride), reps),
        median_ms(lambda: mod.conv2d_valid_grad_input(gy, w, stride, h, h), reps),
    )


def bench_bilinear(mod, img, cx, cy, g, reps):
    fwd = median_ms(lambda: mod.bilinear_gather(img, cx, cy), reps)
    bwd = median_ms(lambda: mod.bilinear_gather_backward(img, cx, cy, g), reps)
    return fwd, bwd


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--reps", type=int, default=30)
    parser.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    args = parser.parse_args()
    dtype = np.dtype(args.dtype)

    backends = [("numpy", numpy_backend)]
    if _ckernels is not None:
        backends.append(("cython", _ckernels))
    else:
        print("compiled backend not built; timing numpy only")
    print(f"dtype={dtype.name} reps={args.reps} cpus={os.cpu_count()}")

    header = f"{'shape':<22}{'backend':<8}{'fwd ms':>9}{'gradW ms':>10}{'gradX ms':>10}"
    print(header)
    print("-" * len(header))
    rng = np.random.default_rng(0)
    for label, n, ci, co, h, k, stride in SHAPES:
        x = rng.standard_normal((n, ci, h, h)).astype(dtype)
        w = rng.standard_normal((co, ci, k, k)).astype(dtype)
        ho = (h - k) // stride + 1
        gy = rng.standard_normal((n, co, ho, ho)).astype(dtype)
        for name, mod in backends:
            f, gw, gx = bench_backend(mod, x, w, gy, k, stride, args.reps)
            print(f"{label:<22}{name:<8}{f:>9.3f}{gw:>10.3f}{gx:>10.3f}")

    print()
    header = f"{'bilinear 16ch 32px':<22}{'backend':<8}{'fwd ms':>9}{'bwd ms':>10}"
    print(header)
    print("-" * len(header))
    img = rng.standard_normal((4, 16, 32, 32)).astype(dtype)
    cx = np.ascontiguousarray(
        rng.uniform(-1, 33, size=img.shape).astype(dtype))
    cy = np.ascontiguousarray(
        rng.uniform(-1, 33, size=img.shape).astype(dtype))
    g = rng.standard_normal(img.shape).astype(dtype)
    for name, mod in backends:
        f, b = bench_bilinear(mod, img, cx, cy, g, args.reps)
        print(f"{'':<22}{name:<8}{f:>9.3f}{b:>10.3f}")


if __name__ == "__main__":
    main()
