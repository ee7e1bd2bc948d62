"""Kernel and method timings.

Two tables are printed:

* each hot kernel under the compiled and the numpy backend;
* one robust power method component (L = T = 30) on a dense symmetric tensor,
  exact versus sketched, across n, to show where sketching starts to pay.

Usage::

    python benchmarks/bench_kernels.py [--repeat 3] [--sizes 50,100,200,400] [--b 4096] [--B 20]
"""
import argparse
import time

import numpy as np

from sketchcp import kernels
from sketchcp.decompose import PowerConfig, robust_tpm_exact, robust_tpm_fast
from sketchcp.sketch import SymTensorSketchSet, sketch_dense_sym
from sketchcp.tensor_core import mirror_sorted


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng):
    n, L, B, b = 200, 30, 20, 4096
    T = mirror_sorted(rng.standard_normal((64, 64, 64)))
    vals = rng.standard_normal((L, n))
    buckets = rng.integers(0, b, (B, n))
    signs = rng.choice([1, -1, 1j, -1j], (B, n))
    S = rng.standard_normal((B, b)) + 1j * rng.standard_normal((B, b))
    F = rng.standard_normal((3, B, L, b)) + 1j * rng.standard_normal((3, B, L, b))
    h, sig = rng.integers(0, 1024, 64), rng.choice([1, -1, 1j, -1j], 64)
    hs = [rng.integers(0, 1024, 64) for _ in range(3)]
    ss = [rng.choice([-1.0, 1.0], 64) for _ in range(3)]
    coeffs = rng.integers(0, 2**31 - 1, 6).astype(np.uint64)
    x = rng.integers(0, 2**31 - 1, 100_000)
    return {
        "poly_hash_eval (1e5 keys, 6-wise)": lambda: kernels.poly_hash_eval(coeffs, x, 2**31 - 1, b),
        "sketch_columns (B=20, L=30, n=200)": lambda: kernels.sketch_columns(vals, buckets, signs, b),
        "sym_dense_sketch (n=64)": lambda: kernels.sym_dense_sketch(T, h, sig, 1024),
        "asym_dense_sketch (n=64)": lambda: kernels.asym_dense_sketch(T, *hs, *ss, 1024),
        "spectrum_sym_ivv": lambda: kernels.spectrum_sym_ivv(S, F[:2]),
        "spectrum_sym_vvv": lambda: kernels.spectrum_sym_vvv(S, F[:2]),
        "spectrum_corr2": lambda: kernels.spectrum_corr2(S, F[:2]),
        "spectrum_inner3": lambda: kernels.spectrum_inner3(S, F),
    }


def bench_kernels(repeat):
    cases = kernel_cases(np.random.default_rng(0))
    backends = sorted(kernels.BACKENDS)
    print(f"{'kernel':40s}" + "".join(f"{name:>12s}" for name in backends) + f"{'ratio':>8s}")
    for label, fn in cases.items():
        row = {}
        for name in backends:
            previous = kernels.use_backend(name)
            try:
                row[name] = best_of(fn, repeat)
            finally:
                kernels.use_backend(previous)
        ratio = row["python"] / row["cython"] if "cython" in row else float("nan")
        print(f"{label:40s}" + "".join(f"{row[name] * 1e3:10.2f}ms" for name in backends) + f"{ratio:8.2f}")


def bench_crossover(sizes, b, B, repeat):
    print(f"\none power-method component, L=T=30, b={b}, B={B}")
    print(f"{'n':>6s}{'exact s':>10s}{'sketch s':>10s}{'fast s':>10s}{'exact/fast':>12s}")
    for n in sizes:
        a = mirror_sorted(np.random.default_rng(n).standard_normal((n, n, n)))
        cfg = PowerConfig(k=1, L=30, T_iters=30, b=b, B=B, seed=0)
        exact = best_of(lambda: robust_tpm_exact(a, cfg), repeat)
        build = best_of(lambda: sketch_dense_sym(a, SymTensorSketchSet.create(n, b, B, 0)), repeat)
        sset = sketch_dense_sym(a, SymTensorSketchSet.create(n, b, B, 0))
        fast = best_of(lambda: robust_tpm_fast(sset, n, cfg), repeat)
        print(f"{n:6d}{exact:10.3f}{build:10.3f}{fast:10.3f}{exact / fast:12.2f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--sizes", default="50,100,200,400")
    ap.add_argument("--b", type=int, default=4096)
    ap.add_argument("--B", type=int, default=20)
    ap.add_argument("--skip-crossover", action="store_true")
    args = ap.parse_args()
    bench_kernels(args.repeat)
    if not args.skip_crossover:
        bench_crossover([int(s) for s in args.sizes.split(",")], args.b, args.B, args.repeat)


if __name__ == "__main__":
    main()
