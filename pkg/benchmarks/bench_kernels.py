#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the NumPy/SciPy fallback.

Times the three hot kernels on renderer-shaped workloads: the spatially
varying pillbox gather (planar radius map), dense fixed-kernel
convolution, and windowed box sums. Run after `pip install -e .` so the
compiled extension exists; without it only the fallback is timed.

    python benchmarks/bench_kernels.py [--size 512] [--repeat 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from lenssweep.kernels import available_backends
from lenssweep.renderer import pillbox_kernel


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def make_workloads(size: int):
    rng = np.random.default_rng(0)
    img = rng.random((size, size, 3)).astype(np.float32)
    gray = img[:, :, 0].copy()

    # planar radius field, quantized at 1/8 px: the renderer's inner loop
    ys, xs = np.mgrid[0:size, 0:size]
    radius = 12.0 * (0.2 + 0.8 * (xs + ys) / (2.0 * size))
    step = 0.125
    kidx = np.rint(radius / step).astype(np.int32)
    lut = [np.asarray(pillbox_kernel(j * step)) for j in range(int(kidx.max()) + 1)]

    fixed = np.asarray(pillbox_kernel(4.0))
    return img, gray, kidx, lut, fixed


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    img, gray, kidx, lut, fixed = make_workloads(args.size)
    backends = available_backends()
    cases = {
        "varying_convolve (planar radii 0..12, 3ch)": lambda b: b.varying_convolve(
            img, kidx, lut, mode="mirror"
        ),
        "convolve2d (pillbox r=4, 3ch)": lambda b: b.convolve2d(img, fixed, mode="mirror"),
        "box_sum (window 21)": lambda b: b.box_sum(gray, 10),
    }

    print(f"image {args.size}x{args.size}, best of {args.repeat}\n")
    header = f"{'kernel':45s}" + "".join(f"{m.NAME:>12s}" for m in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    print("-" * len(header))
    for name, call in cases.items():
        times = [_time(lambda b=b: call(b), args.repeat) for b in backends]
        row = f"{name:45s}" + "".join(f"{t * 1e3:10.1f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:9.1f}x"
        print(row)

        # backends must agree on the result, not just on speed
        if len(backends) == 2:
            a = call(backends[0])
            b = call(backends[1])
            err = float(np.abs(np.asarray(a, np.float64) - np.asarray(b, np.float64)).max())
            if err > 1e-5:
                print(f"  WARNING: backends disagree, max|diff|={err:.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
