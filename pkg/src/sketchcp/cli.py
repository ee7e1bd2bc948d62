"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 input-format error, 4 numerical
failure. Every option can also be set through an environment variable
``SKETCHCP_<COMMAND>_<OPTION>`` (for example ``SKETCHCP_SKETCH_SEED``). The
replicate count ``--B`` reads ``SKETCHCP_REPLICATES`` (``SKETCHCP_SWEEP_REPLICATES``
for ``--Bs``) and the global ``--threads`` reads ``SKETCHCP_THREADS``.
"""
import csv
import json
import os
import sys
import time

import click
import numpy as np

from sketchcp import _fft
from sketchcp.bench import METHODS, SCHEMA_VERSION, decompose_dense, run_synth_bench, sweep
from sketchcp.decompose import AlsConfig, PowerConfig, als_fast, robust_tpm_fast
from sketchcp.errors import InputFormatError, SketchCPError
from sketchcp.sketch import (
    MAGIC,
    AsymTensorSketchSet,
    SymTensorSketchSet,
    load_sketch,
    save_sketch,
    sketch_dense_asym,
    sketch_dense_sym,
)
from sketchcp.tensor_core import first_asymmetric_triple, read_coo


def _dump(obj, path):
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if path in (None, "-"):
        click.echo(text, nl=False)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _power_of_two(ctx, param, value):
    if value is not None and (value < 2 or value & (value - 1)):
        raise click.BadParameter(f"{value} is not a power of two >= 2")
    return value


def _positive(ctx, param, value):
    if value is not None and value < 1:
        raise click.BadParameter("must be >= 1")
    return value


def _int_list(ctx, param, value):
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}") from None


def _float_list(ctx, param, value):
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {value!r}") from None


def _sketch_options(f):
    f = click.option("--seed", type=int, default=0, show_default=True, help="Master seed.")(f)
    # b and B would share an auto-generated variable name, so B gets its own
    f = click.option("--B", "B", type=int, default=20, show_default=True, callback=_positive,
                     envvar="SKETCHCP_REPLICATES", help="Independent sketch replicates.")(f)
    f = click.option("--b", "b", type=int, default=4096, show_default=True, callback=_power_of_two,
                     help="Sketch length (power of two).")(f)
    return f


def _power_options(f):
    f = click.option("--T", "T_iters", type=int, default=30, show_default=True, callback=_positive,
                     help="Power iterations per initialization.")(f)
    f = click.option("--L", "L", type=int, default=30, show_default=True, callback=_positive,
                     help="Random initializations per component.")(f)
    return f


def _als_options(f):
    f = click.option("--tol", type=float, default=1e-6, show_default=True, help="ALS convergence tolerance.")(f)
    f = click.option("--max-iters", type=int, default=1000, show_default=True, callback=_positive,
                     help="ALS iteration cap.")(f)
    return f


class _Group(click.Group):
    """Maps library exceptions to exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except SketchCPError as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(exc.exit_code)
        except ValueError as exc:
            click.echo(f"usage error: {exc}", err=True)
            ctx.exit(2)


@click.group(cls=_Group, context_settings={"auto_envvar_prefix": "SKETCHCP", "help_option_names": ["-h", "--help"]})
@click.option("--threads", type=int, default=None, envvar="SKETCHCP_THREADS",
              help="FFT worker threads (default: available cores). Results do not depend on it.")
@click.version_option(package_name="artifact", prog_name="sketchcp")
def main(threads):
    """Sketched CP decomposition of third-order tensors and fast spectral LDA."""
    _fft.set_workers(threads if threads else (os.cpu_count() or 1))


@main.command("synth-bench")
@click.option("--n", type=int, required=True, callback=_positive, help="Tensor dimension.")
@click.option("--k", type=int, required=True, callback=_positive, help="Planted rank.")
@click.option("--top", type=int, default=None, callback=_positive,
              help="Components to extract and score [default: min(k, 10)].")
@click.option("--sigma", type=float, default=0.0, show_default=True, help="Noise level ||E||_F.")
@click.option("--method", type=click.Choice(METHODS), default="power", show_default=True)
@_sketch_options
@_power_options
@_als_options
@click.option("--out", type=click.Path(dir_okay=False, writable=True), default="-", show_default=True)
def synth_bench(n, k, top, sigma, method, b, B, seed, L, T_iters, max_iters, tol, out):
    """Plant an orthogonal tensor, decompose it and score recovery."""
    if sigma < 0:
        raise click.BadParameter("must be non-negative", param_hint="--sigma")
    if k > n or (top is not None and top > k):
        raise click.UsageError("need top <= k <= n")
    _dump(run_synth_bench(n, k, sigma, method, b, B, L, T_iters, seed, top, max_iters, tol), out)


@main.command("sketch")
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Tensor in COO text format.")
@click.option("--sym/--asym", default=False, show_default=True, help="Symmetric (colliding-hash) sketch.")
@_sketch_options
@click.option("--out", type=click.Path(dir_okay=False, writable=True), required=True)
def sketch_cmd(input_path, sym, b, B, seed, out):
    """Build and save a sketch set of a COO tensor."""
    T, _ = read_coo(input_path)
    t0 = time.perf_counter()
    if sym:
        bad = first_asymmetric_triple(T, atol=1e-9 * max(1.0, float(np.abs(T.array).max())))
        if bad is not None:
            raise InputFormatError(f"tensor is not symmetric at triple {tuple(x + 1 for x in bad)} (1-indexed)")
        sset = sketch_dense_sym(T, SymTensorSketchSet.create(T.n, b, B, seed), check_symmetric=False)
    else:
        sset = sketch_dense_asym(T, AsymTensorSketchSet.create(T.n, b, B, seed))
    build_ms = (time.perf_counter() - t0) * 1e3
    save_sketch(out, sset)
    click.echo(f"built {sset.mode} sketch n={T.n} b={b} B={B} in {build_ms:.1f} ms; "
               f"||data||_F = {np.linalg.norm(sset.data):.6g}", err=True)


def _is_sketch_file(path):
    with open(path, "rb") as fh:
        return fh.read(len(MAGIC)) == MAGIC


@main.command("decompose")
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="COO tensor or saved sketch file.")
@click.option("--k", type=int, required=True, callback=_positive, help="Components to extract.")
@click.option("--method", type=click.Choice(METHODS), default="power", show_default=True)
@_sketch_options
@_power_options
@_als_options
@click.option("--out", type=click.Path(dir_okay=False, writable=True), default="-", show_default=True)
def decompose_cmd(input_path, k, method, b, B, seed, L, T_iters, max_iters, tol, out):
    """Decompose a tensor (sketching it first for fast methods) or a saved sketch."""
    sketch_ms = 0.0
    if _is_sketch_file(input_path):
        sset = load_sketch(input_path)
        if method.endswith("exact"):
            raise click.UsageError(f"method {method} needs the dense tensor, not a sketch file")
        if (method == "power") != (sset.mode == "sym"):
            need = "symmetric" if method == "power" else "asymmetric"
            raise click.UsageError(f"method {method} needs a {need} sketch; file holds a {sset.mode} sketch")
        if k > sset.n:
            raise click.UsageError(f"--k {k} exceeds tensor dimension {sset.n}")
        b, B, seed_used = sset.b, sset.B, sset.seed
        t0 = time.perf_counter()
        if method == "power":
            D, _ = robust_tpm_fast(sset, sset.n, PowerConfig(k=k, L=L, T_iters=T_iters, b=b, B=B, seed=seed))
        else:
            D = als_fast(sset, sset.n, AlsConfig(k=k, max_iters=max_iters, tol=tol, b=b, B=B, seed=seed))
        dec_ms = (time.perf_counter() - t0) * 1e3
        n = sset.n
    else:
        T, _ = read_coo(input_path)
        if k > T.n:
            raise click.UsageError(f"--k {k} exceeds tensor dimension {T.n}")
        if method.startswith("power") and not T.is_symmetric(atol=1e-9 * max(1.0, float(np.abs(T.array).max()))):
            raise click.UsageError(f"method {method} needs a symmetric tensor")
        D, sketch_ms, dec_ms = decompose_dense(T, method, k, b, B, L, T_iters, seed, max_iters, tol)
        n, seed_used = T.n, seed
    _dump({
        "schema_version": SCHEMA_VERSION,
        "method": method,
        "config": {"n": n, "k": k, "b": b, "B": B, "L": L, "T": T_iters, "seed": seed,
                   "sketch_seed": seed_used, "max_iters": max_iters, "tol": tol},
        "eigenvalues": [float(x) for x in D.lambdas],
        "factors": {"A": D.A.T.tolist(), "B": D.B.T.tolist(), "C": D.C.T.tolist()},
        "timing_ms": {"sketch_build": sketch_ms, "decomposition": dec_ms},
    }, out)


@main.command("lda")
@click.option("--docword", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Training corpus, UCI docword format.")
@click.option("--heldout", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Held-out corpus for the likelihood report.")
@click.option("--vocab", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Vocabulary file, one token per line.")
@click.option("--k", type=int, required=True, callback=_positive, help="Number of topics.")
@click.option("--alpha0", type=float, default=1.0, show_default=True, help="Dirichlet concentration sum.")
@click.option("--method", type=click.Choice(["fast", "exact"]), default="fast", show_default=True)
@click.option("--cross-term", type=click.Choice(["unbiased", "literal"]), default="unbiased", show_default=True,
              help="Estimator for the E[x1 x2 M1] terms of the third moment.")
@_sketch_options
@_power_options
@click.option("--out", type=click.Path(dir_okay=False, writable=True), default="-", show_default=True)
@click.option("--emit-plot-data", type=click.Path(dir_okay=False, writable=True), default=None,
              help="Write (time_ms, likelihood) CSV after each phase.")
def lda_cmd(docword, heldout, vocab, k, alpha0, method, cross_term, b, B, seed, L, T_iters, out, emit_plot_data):
    """Fit spectral LDA and report held-out per-word log-likelihood."""
    from sketchcp.lda import fit_spectral_lda, heldout_likelihood, model_to_json, read_docword, read_vocab

    if alpha0 <= 0:
        raise click.BadParameter("must be positive", param_hint="--alpha0")
    train = read_docword(docword)
    words = read_vocab(vocab) if vocab else None
    if words is not None and len(words) != train.V:
        raise InputFormatError(f"vocabulary has {len(words)} entries, corpus has {train.V} words")
    held = read_docword(heldout, V=train.V) if heldout else None
    if k > train.V:
        raise click.UsageError(f"--k {k} exceeds vocabulary size {train.V}")
    model, timings = fit_spectral_lda(train, k, alpha0, b, B, L, T_iters, seed, method, cross_term)
    report = {
        "schema_version": SCHEMA_VERSION,
        "config": {"k": k, "alpha0": alpha0, "method": method, "cross_term": cross_term, "b": b, "B": B,
                   "L": L, "T": T_iters, "seed": seed, "D": train.D, "V": train.V},
        "model": model_to_json(model, words),
        "eigenvalues": model.info["eigenvalues"],
        "heldout_loglik": None,
        "timing_ms": timings,
    }
    if held is not None:
        t0 = time.perf_counter()
        report["heldout_loglik"] = heldout_likelihood(model, held)
        timings["evaluation"] = (time.perf_counter() - t0) * 1e3
    _dump(report, out)
    if emit_plot_data:
        with open(emit_plot_data, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["phase", "time_ms", "loglik"])
            total = 0.0
            for phase, ms in timings.items():
                total += ms
                w.writerow([phase, f"{total:.3f}", "" if report["heldout_loglik"] is None
                            or phase != "evaluation" else repr(report["heldout_loglik"])])


@main.command("synth-corpus")
@click.option("--V", "V", type=int, required=True, callback=_positive)
@click.option("--k", type=int, required=True, callback=_positive)
@click.option("--D", "D", type=int, required=True, callback=_positive)
@click.option("--doc-len", type=int, default=50, show_default=True, callback=_positive)
@click.option("--alpha", type=float, default=0.2, show_default=True, help="Symmetric per-topic alpha.")
@click.option("--heldout", type=int, default=0, show_default=True, help="Held-out documents to draw.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, writable=True), required=True)
@click.option("--heldout-out", type=click.Path(dir_okay=False, writable=True), default=None)
@click.option("--model-out", type=click.Path(dir_okay=False, writable=True), default=None)
def synth_corpus(V, k, D, doc_len, alpha, heldout, seed, out, heldout_out, model_out):
    """Draw a synthetic LDA corpus in docword format."""
    from sketchcp.lda import generate_synthetic_corpus, save_model, write_docword

    if alpha <= 0:
        raise click.BadParameter("must be positive", param_hint="--alpha")
    if heldout and not heldout_out:
        raise click.UsageError("--heldout needs --heldout-out")
    res = generate_synthetic_corpus(V, k, D, alpha, doc_len, seed, heldout=heldout)
    write_docword(out, res[0])
    if heldout:
        write_docword(heldout_out, res[1])
    if model_out:
        save_model(model_out, res[-1])


@main.command("sweep")
@click.option("--kind", type=click.Choice(["power", "als"]), default="power", show_default=True)
@click.option("--n", type=int, required=True, callback=_positive)
@click.option("--k", type=int, required=True, callback=_positive)
@click.option("--top", type=int, default=None, callback=_positive)
@click.option("--sigmas", default="0.01", show_default=True, callback=_float_list)
@click.option("--bs", default="1024,4096", show_default=True, callback=_int_list)
@click.option("--Bs", "Bs", default="20", show_default=True, callback=_int_list, envvar="SKETCHCP_SWEEP_REPLICATES")
@click.option("--seeds", default="0", show_default=True, callback=_int_list)
@_power_options
@_als_options
@click.option("--out", type=click.Path(dir_okay=False, writable=True), default="-", show_default=True,
              help="CSV table, one row per run.")
@click.option("--emit-plot-data", type=click.Path(dir_okay=False, writable=True), default=None,
              help="Write (b, residual) series as CSV.")
def sweep_cmd(kind, n, k, top, sigmas, bs, Bs, seeds, L, T_iters, max_iters, tol, out, emit_plot_data):
    """Table-shaped sweep over sigma, b and B."""
    for b in bs:
        _power_of_two(None, None, b)
    rows = list(sweep(kind, n, k, sigmas, bs, Bs, seeds, L, T_iters, top, max_iters, tol))
    fields = list(rows[0].keys())
    fh = sys.stdout if out == "-" else open(out, "w", newline="")
    try:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    if emit_plot_data:
        with open(emit_plot_data, "w", newline="") as pf:
            w = csv.writer(pf)
            w.writerow(["series", "x_b", "y_residual"])
            for r in rows:
                if r["b"] != "":
                    w.writerow([f"{r['method']} sigma={r['sigma']} B={r['B']} seed={r['seed']}", r["b"],
                                repr(r["residual"])])
