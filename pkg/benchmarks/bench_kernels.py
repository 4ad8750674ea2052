#!/usr/bin/env python3
"""Compare the compiled kernel backend against the numpy reference.

Runs each kernel at training-relevant shapes (the temporal module works on
batch*frames x dim blocks) and reports per-call microseconds plus the
speedup of the compiled path. Verifies numerical agreement first.

Usage: python3 benchmarks/bench_kernels.py [--dtype float32|float64] [--repeat N]
"""

import argparse
import time

import numpy as np

from gvr.kernels import available_backends


def timeit(fn, repeat):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat * 1e6  # us


def cases(dtype, rng):
    d = 32
    rows = 128  # batch 16 x 8 frames
    x = rng.normal(size=(rows, d)).astype(dtype)
    big = rng.normal(size=(rows, rows)).astype(dtype)
    gain = np.ones(d, dtype=dtype)
    bias = np.zeros(d, dtype=dtype)
    gy = rng.normal(size=(rows, d)).astype(dtype)
    flat = rng.normal(size=rows * d).astype(dtype)
    p = rng.normal(size=rows * d).astype(dtype)
    g = rng.normal(size=rows * d).astype(dtype)

    def build(k):
        m = np.zeros_like(p)
        v = np.zeros_like(p)
        return [
            ("matmul 128x32 @ 32x32", lambda: k.matmul(x, x.T.copy())),
            ("matmul 128x128 @ 128x128", lambda: k.matmul(big, big)),
            ("softmax 128x128", lambda: k.softmax(big)),
            ("log_softmax 128x128", lambda: k.log_softmax(big)),
            ("layer_norm fwd 128x32", lambda: k.layer_norm_fwd(x, gain, bias, 1e-5)),
            ("layer_norm bwd 128x32", lambda: k.layer_norm_bwd(
                *k.layer_norm_fwd(x, gain, bias, 1e-5)[1:], gain, gy)),
            ("gelu 4096", lambda: k.gelu(flat)),
            ("l2norm rows 128x32", lambda: k.l2norm_rows(x)),
            ("adamw update 4096", lambda: k.adamw_update(
                p.copy(), g, m, v, 1, 1e-3, 0.9, 0.999, 1e-8, 0.05)),
        ]

    return build


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dtype", default="float32", choices=("float32", "float64"))
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args()

    backends = available_backends()
    if "cython" not in backends:
        raise SystemExit("compiled backend not built; run pip install -e . first")
    dtype = np.float32 if args.dtype == "float32" else np.float64
    rng = np.random.default_rng(0)
    build = cases(dtype, rng)

    # agreement check before timing
    rows = 64
    xx = rng.normal(size=(rows, 16)).astype(dtype)
    ref = backends["numpy"].softmax(xx)
    fast = backends["cython"].softmax(xx)
    np.testing.assert_allclose(fast, ref, rtol=1e-4, atol=1e-5)

    print(f"dtype={args.dtype} repeat={args.repeat}")
    print(f"{'kernel':<28} {'numpy us':>10} {'cython us':>10} {'speedup':>8}")
    for (name, fn_np), (_, fn_cy) in zip(build(backends["numpy"]), build(backends["cython"])):
        t_np = timeit(fn_np, args.repeat)
        t_cy = timeit(fn_cy, args.repeat)
        print(f"{name:<28} {t_np:>10.2f} {t_cy:>10.2f} {t_np / t_cy:>7.2f}x")


if __name__ == "__main__":
    main()
