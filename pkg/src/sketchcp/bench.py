"""Experiment runners shared by the CLI and the acceptance tests.

Results are plain dicts ready for JSON. Everything that depends on the
wall clock lives under the ``"timing_ms"`` key so the rest of a result is
reproducible bit for bit from its ``"config"``.
"""
import time

from sketchcp.decompose import AlsConfig, PowerConfig, als_exact, als_fast, robust_tpm_exact, robust_tpm_fast
from sketchcp.metrics import recovery_metrics
from sketchcp.sketch import AsymTensorSketchSet, SymTensorSketchSet, sketch_dense_asym, sketch_dense_sym
from sketchcp.tensor_core import cp_residual, synth_orthogonal_tensor

SCHEMA_VERSION = 1
METHODS = ("power", "als", "power-exact", "als-exact")


def decompose_dense(T, method, k, b=4096, B=20, L=30, T_iters=30, seed=0, max_iters=1000, tol=1e-6):
    """Run one method on a dense tensor; returns (decomposition, sketch_ms, decomposition_ms)."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    n = T.n
    sketch_ms = 0.0
    t0 = time.perf_counter()
    if method == "power-exact":
        D = robust_tpm_exact(T, PowerConfig(k=k, L=L, T_iters=T_iters, b=b, B=B, seed=seed))
    elif method == "als-exact":
        D = als_exact(T, AlsConfig(k=k, max_iters=max_iters, tol=tol, b=b, B=B, seed=seed))
    elif method == "power":
        sset = sketch_dense_sym(T, SymTensorSketchSet.create(n, b, B, seed))
        t1 = time.perf_counter()
        sketch_ms = (t1 - t0) * 1e3
        t0 = t1
        D, _ = robust_tpm_fast(sset, n, PowerConfig(k=k, L=L, T_iters=T_iters, b=b, B=B, seed=seed))
    else:
        aset = sketch_dense_asym(T, AsymTensorSketchSet.create(n, b, B, seed))
        t1 = time.perf_counter()
        sketch_ms = (t1 - t0) * 1e3
        t0 = t1
        D = als_fast(aset, n, AlsConfig(k=k, max_iters=max_iters, tol=tol, b=b, B=B, seed=seed))
    return D, sketch_ms, (time.perf_counter() - t0) * 1e3


def run_synth_bench(n, k, sigma, method, b=4096, B=20, L=30, T_iters=30, seed=0, top=None,
                    max_iters=1000, tol=1e-6):
    """Plant an orthogonal tensor, decompose it, and score the top recovered vectors.

    ``k`` is the planted rank and ``top`` (default min(k, 10)) the number of
    components extracted and compared against the ``top`` largest planted ones.
    """
    top = min(k, 10) if top is None else top
    if not 1 <= top <= k <= n:
        raise ValueError(f"need 1 <= top <= k <= n, got top={top}, k={k}, n={n}")
    T, truth = synth_orthogonal_tensor(n, k, sigma, seed)
    D, sketch_ms, dec_ms = decompose_dense(T, method, top, b, B, L, T_iters, seed, max_iters, tol)
    residual, wrong, matches = recovery_metrics(truth.V[:, :top], D.A)
    return {
        "schema_version": SCHEMA_VERSION,
        "method": method,
        "config": {"n": n, "k": k, "top": top, "sigma": sigma, "b": b, "B": B, "L": L, "T": T_iters,
                   "seed": seed, "max_iters": max_iters, "tol": tol},
        "eigenvalues": [float(x) for x in D.lambdas],
        "true_eigenvalues": [float(x) for x in truth.lambdas[:top]],
        "residual": residual,
        "wrong": wrong,
        "fit_residual": cp_residual(T, D),
        "matches": [{"truth": m.truth, "estimate": m.estimate, "sign": m.sign, "sq_dist": m.sq_dist}
                    for m in matches],
        "timing_ms": {"sketch_build": sketch_ms, "decomposition": dec_ms},
    }


def sweep(kind, n, k, sigmas, bs, Bs, seeds, L=30, T_iters=30, top=None, max_iters=1000, tol=1e-6):
    """Table-shaped sweep; yields one row per (sigma, b, B, seed) for the fast method
    plus one exact-method row per (sigma, seed)."""
    fast = "power" if kind == "power" else "als"
    for sigma in sigmas:
        for seed in seeds:
            r = run_synth_bench(n, k, sigma, fast + "-exact", seed=seed, L=L, T_iters=T_iters, top=top,
                                max_iters=max_iters, tol=tol)
            yield _row(r)
            for b in bs:
                for B in Bs:
                    r = run_synth_bench(n, k, sigma, fast, b=b, B=B, L=L, T_iters=T_iters, seed=seed, top=top,
                                        max_iters=max_iters, tol=tol)
                    yield _row(r)


def _row(r):
    c = r["config"]
    exact = r["method"].endswith("exact")
    return {"method": r["method"], "n": c["n"], "k": c["k"], "top": c["top"], "sigma": c["sigma"],
            "b": "" if exact else c["b"], "B": "" if exact else c["B"], "seed": c["seed"],
            "residual": r["residual"], "wrong": r["wrong"],
            "time_ms": r["timing_ms"]["decomposition"], "sketch_ms": r["timing_ms"]["sketch_build"]}
