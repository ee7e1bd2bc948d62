"""CP decomposition drivers: robust tensor power method and ALS.

Each method has an exact variant working on a DenseTensor3 and a fast
variant working only on a sketch set. Exact and fast power methods draw
their initial vectors from the same seeded stream in the same order, so on
the same seed they start from identical points.
"""
from dataclasses import dataclass

import numpy as np

from sketchcp.contraction import approx_Ivv_sym, approx_mode_asym, approx_vvv_sym
from sketchcp.errors import DegenerateIterationError
from sketchcp.hashing import STREAM_INIT, derive_seed
from sketchcp.sketch import add_scaled_rank1_sym
from sketchcp.tensor_core import CPDecomposition, as_dense, contract_Ivv_exact, contract_mode_exact


@dataclass(frozen=True)
class PowerConfig:
    """Robust tensor power method settings.

    ``b``, ``B`` and ``seed`` describe the sketch used by the fast path and
    are echoed in results; the exact path only uses ``seed``.
    """

    k: int
    L: int = 30
    T_iters: int = 30
    b: int = 4096
    B: int = 20
    seed: int = 0
    tol: float = 1e-8

    def __post_init__(self):
        if self.k < 1 or self.L < 1 or self.T_iters < 1:
            raise ValueError(f"need k, L, T_iters >= 1, got {self.k}, {self.L}, {self.T_iters}")


@dataclass(frozen=True)
class AlsConfig:
    k: int
    max_iters: int = 1000
    tol: float = 1e-6
    b: int = 4096
    B: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.max_iters < 1:
            raise ValueError(f"need k >= 1 and max_iters >= 1, got {self.k}, {self.max_iters}")


def _init_rng(seed):
    return np.random.default_rng(derive_seed(seed, STREAM_INIT))


def _unit_columns(X, what):
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise DegenerateIterationError(f"{what}: initialization {bad + 1} collapsed to the zero vector")
    return X / norms


# ------------------------------------------------------------- power method


def robust_tpm_exact(T, cfg):
    """Robust tensor power method with exact contractions and exact deflation.

    Returns a symmetric CPDecomposition with eigenvalues in extraction order.
    """
    T = as_dense(T)
    n = T.n
    if cfg.k > n:
        raise ValueError(f"rank k={cfg.k} exceeds dimension n={n}")
    if not T.is_symmetric(atol=1e-9 * max(1.0, float(np.abs(T.array).max()))):
        raise ValueError("robust_tpm_exact needs a symmetric tensor")
    rng = _init_rng(cfg.seed)
    work = np.array(T.array)
    lambdas, vecs = [], []
    for c in range(cfg.k):
        U = _unit_columns(rng.standard_normal((n, cfg.L)), f"component {c + 1}")
        for _ in range(cfg.T_iters):
            U = _unit_columns(contract_Ivv_exact(work, U, U), f"component {c + 1}")
        vals = np.einsum("il,il->l", U, contract_Ivv_exact(work, U, U))
        tau = int(np.argmax(vals))
        lam, u = float(vals[tau]), U[:, tau].copy()
        work -= lam * np.einsum("i,j,k->ijk", u, u, u)
        lambdas.append(lam)
        vecs.append(u)
    return CPDecomposition.from_symmetric(lambdas, np.column_stack(vecs), method="power-exact")


def robust_tpm_fast(sset, n, cfg, resketch=None):
    """Robust tensor power method on a symmetric sketch set.

    Power updates use per-coordinate medians of the sketched T(I, u, u),
    the best of L candidates is chosen by the median sketched T(u, u, u)
    (ties go to the lowest index), and each component is deflated from a
    private copy of the set.

    Parameters
    ----------
    resketch : callable, optional
        Testing aid. Called with a running iteration counter, it must return
        a fresh sketch set of the original tensor; previously extracted
        components are deflated from it before use. This gives sketch
        randomness that is independent across iterations.

    Returns
    -------
    (CPDecomposition, SymTensorSketchSet)
        The decomposition and the deflated set.
    """
    if cfg.k > n:
        raise ValueError(f"rank k={cfg.k} exceeds dimension n={n}")
    if sset.n != n:
        raise ValueError(f"sketch dimension {sset.n} != n={n}")
    rng = _init_rng(cfg.seed)
    work = sset.copy()
    lambdas, vecs = [], []
    counter = 0

    def current():
        nonlocal counter
        if resketch is None:
            return work
        fresh = resketch(counter)
        counter += 1
        for lam, v in zip(lambdas, vecs):
            add_scaled_rank1_sym(fresh, v, -lam)
        return fresh

    for c in range(cfg.k):
        U = _unit_columns(rng.standard_normal((n, cfg.L)), f"component {c + 1}")
        for _ in range(cfg.T_iters):
            U = _unit_columns(approx_Ivv_sym(current(), U), f"component {c + 1}")
        vals = approx_vvv_sym(current(), U)
        tau = int(np.argmax(vals))
        lam, u = float(vals[tau]), U[:, tau].copy()
        add_scaled_rank1_sym(work, u, -lam)
        lambdas.append(lam)
        vecs.append(u)
    D = CPDecomposition.from_symmetric(lambdas, np.column_stack(vecs), method="power")
    return D, work


# ---------------------------------------------------------------------- ALS


def gram_pinv(G, rel_tol=1e-10):
    """Pseudoinverse of a symmetric PSD matrix, dropping eigenvalues below rel_tol * max."""
    w, Q = np.linalg.eigh(G)
    top = w.max() if w.size else 0.0
    keep = w > rel_tol * top if top > 0 else np.zeros_like(w, dtype=bool)
    return (Q[:, keep] / w[keep]) @ Q[:, keep].T


def _normalize(X):
    lam = np.linalg.norm(X, axis=0)
    safe = np.where(lam > 0, lam, 1.0)
    return X / safe, lam


def _als(contract, n, cfg, exact_norm2=None):
    """Shared ALS loop. ``contract(mode, X, Y)`` returns the (n, k) matrix whose
    column r is T contracted with X[:, r] and Y[:, r] on the other two modes."""
    rng = _init_rng(cfg.seed)
    F = [_normalize(rng.standard_normal((n, cfg.k)))[0] for _ in range(3)]
    lam = np.ones(cfg.k)
    prev = None
    trace = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        for mode in range(3):
            X, Y = (F[j] for j in range(3) if j != mode)
            M = contract(mode, X, Y)
            F[mode], lam = _normalize(M @ gram_pinv((X.T @ X) * (Y.T @ Y)))
        if exact_norm2 is not None:
            # ||T - D||^2 = ||T||^2 - 2 <T, D> + ||D||^2, with <T, D> from the last contraction
            inner = float(np.sum(lam * np.einsum("ir,ir->r", F[2], M)))
            gram = (F[0].T @ F[0]) * (F[1].T @ F[1]) * (F[2].T @ F[2])
            metric = max(exact_norm2 - 2.0 * inner + float(lam @ gram @ lam), 0.0)
            change = abs(prev - metric) / max(prev, 1e-300) if prev is not None else np.inf
            done = change < cfg.tol or metric <= 1e-24 * max(exact_norm2, 1e-300)
        else:
            metric = lam.copy()
            change = (np.linalg.norm(metric - prev) / max(np.linalg.norm(prev), 1e-300)
                      if prev is not None else np.inf)
            done = change < cfg.tol
        if exact_norm2 is not None:
            trace.append(metric)
        prev = metric
        if done:
            converged = True
            break
    return lam, F, it, converged, trace


def als_exact(T, cfg):
    """ALS with exact mode contractions; stops on relative residual change < tol.

    ``info["residuals"]`` holds the squared fit residual after every sweep.
    """
    T = as_dense(T)
    if cfg.k > T.n:
        raise ValueError(f"rank k={cfg.k} exceeds dimension n={T.n}")
    lam, F, it, conv, trace = _als(lambda m, X, Y: contract_mode_exact(T, m, X, Y), T.n, cfg,
                                   exact_norm2=float(np.sum(T.array**2)))
    return CPDecomposition(lam, F[0], F[1], F[2], info={"method": "als-exact", "iterations": it,
                                                        "converged": conv, "residuals": trace})


def als_fast(aset, n, cfg):
    """ALS on an asymmetric sketch set; stops on relative eigenvalue change < tol.

    Each factor update estimates the matricized-tensor times Khatri-Rao
    product column by column from the sketch, then applies the exact
    pseudoinverse of the k x k Gram product.
    """
    if cfg.k > n:
        raise ValueError(f"rank k={cfg.k} exceeds dimension n={n}")
    if aset.n != n:
        raise ValueError(f"sketch dimension {aset.n} != n={n}")
    lam, F, it, conv, _ = _als(lambda m, X, Y: approx_mode_asym(aset, m, X, Y), n, cfg)
    return CPDecomposition(lam, F[0], F[1], F[2], info={"method": "als", "iterations": it,
                                                        "converged": conv})


# ------------------------------------------------------------ diagnostics


@dataclass(frozen=True)
class EigengapReport:
    eigenvalues: tuple
    min_gap: float
    ratio: float
    b_advisory: int | None


def eigengap_report(D, frobenius_norm=None, eps=0.1):
    """Sorted eigenvalues, minimal gap, largest ratio and a sketch-length hint.

    The hint is the next power of two above ``||T||_F**2 / (eps**2 * gap**2)``.
    Constants in the underlying bound are unspecified, so it is advisory only
    and is None when the norm is not supplied or the gap is undefined.
    """
    lam = np.sort(np.abs(np.asarray(D.lambdas, dtype=np.float64)))[::-1]
    if lam.size == 0:
        raise ValueError("empty decomposition")
    gap = float(np.min(lam[:-1] - lam[1:])) if lam.size > 1 else float("inf")
    ratio = float(lam[0] / lam[-1]) if lam[-1] > 0 else float("inf")
    advisory = None
    if frobenius_norm is not None and np.isfinite(gap) and gap > 0:
        need = frobenius_norm**2 / (eps**2 * gap**2)
        advisory = 1 << max(1, int(np.ceil(np.log2(max(need, 2.0)))))
    return EigengapReport(tuple(float(x) for x in lam), gap, ratio, advisory)
