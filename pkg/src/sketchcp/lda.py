"""Spectral LDA: empirical moments, whitening, sketched third moment, recovery.

Moments follow the Dirichlet-mixture identities

    M1 = E[x1]
    M2 = E[x1 x2] - a0/(a0+1) M1 M1
    M3 = E[x1 x2 x3] - a0/(a0+2) (E[x1 x2 M1] + perms) + 2 a0^2/((a0+1)(a0+2)) M1^3

with a0 = sum(alpha). Within-document estimators use ordered tuples of
distinct word positions, so every document contributes an unbiased
estimate and documents are weighted equally.
"""
import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment

from sketchcp import _fft
from sketchcp.errors import InputFormatError, RankDeficiencyError
from sketchcp.hashing import STREAM_CORPUS, derive_seed
from sketchcp.sketch import CHUNK_ELEMENTS

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class Corpus:
    """Bag-of-words documents as a (D, V) sparse count matrix."""

    counts: sp.csr_matrix
    V: int = None

    def __post_init__(self):
        X = sp.csr_matrix(self.counts, dtype=np.int64)
        V = X.shape[1] if self.V is None else int(self.V)
        if X.shape[1] != V:
            X = sp.csr_matrix((X.data, X.indices, X.indptr), shape=(X.shape[0], V))
        X.sum_duplicates()
        X.eliminate_zeros()
        if X.nnz and X.data.min() < 0:
            raise ValueError("word counts must be non-negative")
        object.__setattr__(self, "counts", X)
        object.__setattr__(self, "V", V)

    @classmethod
    def from_docs(cls, V, docs):
        """``docs`` is a sequence of {word_id: count} mappings (0-based ids)."""
        rows, cols, vals = [], [], []
        for d, doc in enumerate(docs):
            for w, c in doc.items():
                if not 0 <= w < V:
                    raise ValueError(f"word id {w} outside vocabulary of size {V}")
                rows.append(d)
                cols.append(w)
                vals.append(c)
        return cls(sp.csr_matrix((vals, (rows, cols)), shape=(len(docs), V)), V)

    @property
    def D(self):
        return self.counts.shape[0]

    @property
    def lengths(self):
        return np.asarray(self.counts.sum(axis=1)).ravel()

    def subset(self, rows):
        return Corpus(self.counts[rows], self.V)


@dataclass(frozen=True)
class LdaModel:
    """Topic matrix Phi (V x k, columns on the simplex) and Dirichlet prior alpha."""

    Phi: np.ndarray
    alpha: np.ndarray
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        Phi = np.asarray(self.Phi, dtype=np.float64)
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=np.float64))
        if Phi.ndim != 2 or Phi.shape[1] != alpha.size:
            raise ValueError(f"Phi shape {Phi.shape} does not match {alpha.size} topics")
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "alpha", alpha)

    @property
    def alpha0(self):
        return float(self.alpha.sum())

    @property
    def k(self):
        return self.alpha.size

    @property
    def V(self):
        return self.Phi.shape[0]

    def is_valid(self, atol=1e-9):
        return bool(np.all(self.Phi >= 0) and np.allclose(self.Phi.sum(axis=0), 1.0, atol=atol)
                    and np.all(self.alpha > 0))


@dataclass(frozen=True)
class WhiteningMap:
    W: np.ndarray  # V x k, W^T M2 W = I
    eigenvalues: np.ndarray  # top-k eigenvalues of M2
    W_pinv_T: np.ndarray  # (W^+)^T = U sqrt(s), maps whitened vectors back

    @property
    def k(self):
        return self.W.shape[1]


# ------------------------------------------------------------------ moments


def compute_m1(c):
    """Average over documents of the normalized word frequencies n_d / m_d."""
    m = c.lengths
    keep = m > 0
    if not keep.any():
        raise ValueError("empty corpus")
    X = c.counts[keep]
    return np.asarray(X.multiply(1.0 / m[keep][:, None]).sum(axis=0)).ravel() / keep.sum()


def _pair_moment(c):
    """E[x1 x2] from ordered pairs of distinct positions, documents weighted equally."""
    m = c.lengths
    keep = m >= 2
    if not keep.any():
        raise ValueError("no document has two or more words")
    X = c.counts[keep].astype(np.float64)
    w = 1.0 / (m[keep] * (m[keep] - 1.0))
    pairs = (X.T @ sp.diags(w) @ X).toarray()
    pairs -= np.diag(np.asarray(X.T @ w).ravel())
    return pairs / keep.sum()


def compute_m2(c, alpha0):
    M1 = compute_m1(c)
    M2 = _pair_moment(c) - alpha0 / (alpha0 + 1.0) * np.outer(M1, M1)
    return (M2 + M2.T) / 2.0


def whiten(M2, k):
    """W = U_k / sqrt(s_k) from the top-k eigenpairs of the symmetric M2."""
    M2 = np.asarray(M2, dtype=np.float64)
    if not 1 <= k <= M2.shape[0]:
        raise ValueError(f"k={k} outside 1..{M2.shape[0]}")
    s, U = np.linalg.eigh((M2 + M2.T) / 2.0)
    order = np.argsort(s)[::-1][:k]
    s, U = s[order], U[:, order]
    small = np.flatnonzero(s <= 1e-10)
    if small.size:
        raise RankDeficiencyError(
            f"second moment has numerical rank below k={k}: eigenvalue {small[0] + 1} is {s[small[0]]:.3e}")
    root = np.sqrt(s)
    return WhiteningMap(U / root, s, U * root)


def _sketch_cols(sset, X):
    """FFT of the count sketches of the rows of X: (B, rows, b)."""
    return sset.base_spectrum(np.asarray(X, dtype=np.float64).T)


def _row_chunks(total, sset):
    step = max(1, CHUNK_ELEMENTS // (sset.B * sset.b))
    for start in range(0, total, step):
        yield slice(start, min(total, start + step))


def _m3_pieces(c, wm, alpha0, cross_term):
    """Per-document coefficients and accumulated word-level terms of whitened M3.

    The whitened tensor is

        sum_d c_d p_d^3 - 3 sum_d c'_d p_d^2 q
        + sum_i w_i^2 (x) (-3 P_i + 2 g_i w_i + 3 g'_i q) + c3 q^3

    where "a^2 (x) y" stands for the symmetrized a (x) a (x) y, p_d = W^T n_d,
    q = W^T M1, P_i = sum_d c_d n_di p_d, g_i = sum_d c_d n_di and
    g'_i = sum_d c'_d n_di.
    """
    if cross_term not in ("unbiased", "literal"):
        raise ValueError(f"unknown cross_term {cross_term!r}")
    m = c.lengths.astype(np.float64)
    X = c.counts.astype(np.float64)
    tri = m >= 3
    pair = m >= 2
    n3, n2 = tri.sum(), pair.sum()
    skipped = int(c.D - n3)
    if n3 == 0:
        return None, skipped
    q = wm.W.T @ compute_m1(c)
    P = np.asarray(X @ wm.W)  # (D, k)
    cd = np.where(tri, 1.0 / np.maximum(m * (m - 1) * (m - 2), 1.0), 0.0) / n3
    cp = np.where(pair, 1.0 / np.maximum(m * (m - 1), 1.0), 0.0) / n2 * alpha0 / (alpha0 + 2.0)
    P_i = np.asarray(X.T @ (cd[:, None] * P))  # (V, k)
    g = np.asarray(X.T @ cd).ravel()
    gp = np.asarray(X.T @ cp).ravel() if cross_term == "unbiased" else np.zeros(c.V)
    c3 = 2.0 * alpha0**2 / ((alpha0 + 1.0) * (alpha0 + 2.0))
    return dict(P=P, cd=cd, cp=cp, q=q, P_i=P_i, g=g, gp=gp, c3=c3), skipped


def sketch_whitened_m3(c, wm, alpha0, sset, cross_term="unbiased"):
    """Symmetric sketch of the empirical whitened third moment M3(W, W, W).

    One pass over documents costs one batched transform per chunk of
    documents; the word-level sums are sketched once afterwards. Documents
    with fewer than three words are skipped with a warning. Returns a new set.
    """
    if sset.n != wm.k:
        raise ValueError(f"sketch dimension {sset.n} != whitened dimension {wm.k}")
    pieces, skipped = _m3_pieces(c, wm, alpha0, cross_term)
    if skipped:
        warnings.warn(f"{skipped} document(s) shorter than 3 words skipped in the third moment")
    if pieces is None:
        return sset.with_data(np.zeros_like(sset.data))
    Fq = _sketch_cols(sset, pieces["q"][None])[:, 0]  # (B, b)
    acc = pieces["c3"] * Fq**3
    P, cd, cp = pieces["P"], pieces["cd"], pieces["cp"]
    active = np.flatnonzero((cd != 0) | (cp != 0))
    for sl in _row_chunks(active.size, sset):
        rows = active[sl]
        Fp = _sketch_cols(sset, P[rows])
        F2 = Fp * Fp
        acc += np.einsum("mdb,d->mb", F2 * Fp, cd[rows]) - 3.0 * np.einsum("mdb,d->mb", F2, cp[rows]) * Fq
    W, P_i, g, gp = wm.W, pieces["P_i"], pieces["g"], pieces["gp"]
    used = np.flatnonzero((g != 0) | (gp != 0))
    for sl in _row_chunks(used.size, sset):
        rows = used[sl]
        Fw = _sketch_cols(sset, W[rows])
        FP = _sketch_cols(sset, P_i[rows])
        inner = -3.0 * FP + 2.0 * g[rows][None, :, None] * Fw + 3.0 * gp[rows][None, :, None] * Fq[:, None]
        acc += np.sum(Fw * Fw * inner, axis=1)
    return sset.with_data(_fft.ifft(acc))


def whitened_m3_dense(c, wm, alpha0, cross_term="unbiased"):
    """Dense k x k x k whitened third moment via the same decomposition (no sketching)."""
    k = wm.k
    pieces, skipped = _m3_pieces(c, wm, alpha0, cross_term)
    if pieces is None:
        return np.zeros((k, k, k))

    def sym(a, bb, y):  # a (x) bb (x) y summed over the 3 placements of y; rows batched
        return (np.einsum("ri,rj,rk->ijk", a, bb, y) + np.einsum("ri,rj,rk->ijk", a, y, bb)
                + np.einsum("ri,rj,rk->ijk", y, a, bb))

    P, cd, cp, q = pieces["P"], pieces["cd"], pieces["cp"], pieces["q"]
    W, P_i, g, gp = wm.W, pieces["P_i"], pieces["g"], pieces["gp"]
    out = np.einsum("d,di,dj,dk->ijk", cd, P, P, P)
    out -= sym(P * cp[:, None], P, np.broadcast_to(q, P.shape))
    out -= sym(W, W, P_i)
    out += 2.0 * np.einsum("r,ri,rj,rk->ijk", g, W, W, W)
    out += sym(W * gp[:, None], W, np.broadcast_to(q, W.shape))
    out += pieces["c3"] * np.einsum("i,j,k->ijk", q, q, q)
    return out


def analytic_moments(model):
    """Population (M1, M2, M3) of an LDA model; M3 is dense V x V x V."""
    a, a0, Phi = model.alpha, model.alpha0, model.Phi
    M1 = Phi @ a / a0
    M2 = (Phi * a) @ Phi.T / (a0 * (a0 + 1.0))
    M3 = 2.0 / (a0 * (a0 + 1.0) * (a0 + 2.0)) * np.einsum("r,ir,jr,kr->ijk", a, Phi, Phi, Phi)
    return M1, M2, M3


def raw_moments(model):
    """Population E[x1], E[x1 x2], E[x1 x2 x3] implied by the moment identities."""
    a0 = model.alpha0
    M1, M2, M3 = analytic_moments(model)
    E2 = M2 + a0 / (a0 + 1.0) * np.outer(M1, M1)
    cross = np.einsum("ij,k->ijk", E2, M1)
    cross = cross + cross.transpose(0, 2, 1) + cross.transpose(2, 0, 1)
    E3 = M3 + a0 / (a0 + 2.0) * cross - 2.0 * a0**2 / ((a0 + 1.0) * (a0 + 2.0)) * np.einsum("i,j,k->ijk", M1, M1, M1)
    return M1, E2, E3


# ----------------------------------------------------------------- recovery


def project_simplex(Y):
    """Euclidean projection of each column of Y onto the probability simplex."""
    Y = np.asarray(Y, dtype=np.float64)
    single = Y.ndim == 1
    Y = Y.reshape(Y.shape[0], -1)
    srt = -np.sort(-Y, axis=0)
    css = np.cumsum(srt, axis=0) - 1.0
    idx = np.arange(1, Y.shape[0] + 1)[:, None]
    rho = np.sum(srt - css / idx > 0, axis=0)
    theta = css[rho - 1, np.arange(Y.shape[1])] / rho
    out = np.maximum(Y - theta, 0.0)
    return out[:, 0] if single else out


def recover_params(D, wm, alpha0, project=True):
    """alpha_i = 4 a0 (a0+1) / ((a0+2)^2 lambda_i^2), mu_i = (a0+2)/2 lambda_i (W^+)^T v_i.

    A negative eigenvalue is folded into its vector (odd order makes
    (lambda, v) and (-lambda, -v) the same component). Unprojected topic
    vectors are kept in ``info["raw_topics"]``.
    """
    lam = np.asarray(D.lambdas, dtype=np.float64)
    V = np.asarray(D.V, dtype=np.float64)
    zero = np.flatnonzero(np.abs(lam) < 1e-300)
    if zero.size:
        raise RankDeficiencyError(f"eigenvalue of component {zero[0] + 1} is zero")
    sign = np.sign(lam)
    lam, V = lam * sign, V * sign
    alpha = 4.0 * alpha0 * (alpha0 + 1.0) / ((alpha0 + 2.0) ** 2 * lam**2)
    mu = (alpha0 + 2.0) / 2.0 * lam * (wm.W_pinv_T @ V)
    Phi = project_simplex(mu) if project else mu
    return LdaModel(Phi, alpha, info={"raw_topics": mu})


def match_topics(Phi_true, Phi_hat):
    """Hungarian matching on l1 distance; returns (permutation of Phi_hat columns, per-column l1)."""
    cost = np.abs(Phi_true[:, :, None] - Phi_hat[:, None, :]).sum(axis=0)
    rows, cols = linear_sum_assignment(cost)
    return cols, cost[rows, cols]


def infer_mixtures(Phi, c, max_iters=500, tol=1e-8):
    """Simplex-constrained least squares argmin ||w_d - Phi pi|| by projected gradient.

    Step 1/||Phi||_2^2; stops when no mixture moves by more than ``tol``.
    Returns a (k, D) array.
    """
    m = c.lengths.astype(np.float64)
    Wd = np.asarray(c.counts.multiply(1.0 / np.maximum(m, 1.0)[:, None]).todense()).T  # (V, D)
    k = Phi.shape[1]
    step = 1.0 / np.linalg.norm(Phi, 2) ** 2
    G = Phi.T @ Phi
    R = Phi.T @ Wd
    Pi = np.full((k, c.D), 1.0 / k)
    for _ in range(max_iters):
        new = project_simplex(Pi - step * (G @ Pi - R))
        delta = np.abs(new - Pi).max() if Pi.size else 0.0
        Pi = new
        if delta < tol:
            break
    return Pi


def heldout_likelihood(model, held, return_details=False):
    """Average over documents of (1/m_d) sum_w n_dw ln (Phi pi_d)_w.

    Word probabilities below 1e-12 are floored and counted in a warning.
    """
    if held.V != model.V:
        raise InputFormatError(f"held-out vocabulary size {held.V} != model vocabulary {model.V}")
    keep = held.lengths > 0
    held = held.subset(np.flatnonzero(keep))
    if held.D == 0:
        raise ValueError("held-out corpus has no words")
    Pi = infer_mixtures(model.Phi, held)
    X = held.counts.tocoo()
    prob = np.einsum("vk,kv->v", model.Phi[X.col], Pi[:, X.row])
    floored = int(np.sum(prob < LOG_FLOOR))
    if floored:
        warnings.warn(f"{floored} held-out word occurrence(s) had probability below {LOG_FLOOR}; floored")
    ll = np.bincount(X.row, weights=X.data * np.log(np.maximum(prob, LOG_FLOOR)), minlength=held.D)
    per_doc = ll / held.lengths
    value = float(per_doc.mean())
    return (value, {"per_document": per_doc, "floored": floored, "mixtures": Pi}) if return_details else value


# ---------------------------------------------------------------- synthetic


def sample_corpus(model, D, doc_len, seed):
    """Draw D documents of ``doc_len`` words each from an LDA model."""
    rng = np.random.default_rng(seed)
    H = rng.dirichlet(model.alpha, size=D)
    probs = H @ model.Phi.T
    probs /= probs.sum(axis=1, keepdims=True)
    counts = rng.multinomial(doc_len, probs)
    return Corpus(sp.csr_matrix(counts), model.V)


def generate_synthetic_corpus(V, k, D, alpha, doc_len, seed, topic_concentration=1.0, heldout=0):
    """Synthetic LDA corpus with Dirichlet(topic_concentration) topics.

    Returns (corpus, model), or (corpus, heldout_corpus, model) when
    ``heldout`` documents are requested.
    """
    alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (k,)).copy()
    if V < 1 or k < 1 or D < 0 or doc_len < 1 or np.any(alpha <= 0):
        raise ValueError("V, k, doc_len and alpha must be positive")
    rng = np.random.default_rng(derive_seed(seed, STREAM_CORPUS, 0))
    Phi = rng.dirichlet(np.full(V, float(topic_concentration)), size=k).T
    model = LdaModel(Phi, alpha)
    corpus = sample_corpus(model, D, doc_len, derive_seed(seed, STREAM_CORPUS, 1))
    if heldout:
        return corpus, sample_corpus(model, heldout, doc_len, derive_seed(seed, STREAM_CORPUS, 2)), model
    return corpus, model


# ---------------------------------------------------------------------- IO


def read_docword(path, V=None):
    """Read the UCI docword format: D, W, NNZ header lines, then "doc word count".

    When ``V`` is given the file's vocabulary size must equal it.
    """
    try:
        with open(path) as fh:
            head = [int(fh.readline()) for _ in range(3)]
            body = np.loadtxt(fh, dtype=np.int64, ndmin=2)
    except ValueError as exc:
        raise InputFormatError(f"{path}: malformed docword file ({exc})") from None
    D, W, nnz = head
    if V is not None and W != V:
        raise InputFormatError(f"{path}: vocabulary size {W} does not match expected {V}")
    if body.size == 0:
        body = body.reshape(0, 3)
    if body.shape[1] != 3 or body.shape[0] != nnz:
        raise InputFormatError(f"{path}: header promises {nnz} entries, found {body.shape[0]}")
    d, w, cnt = body.T
    if nnz and (d.min() < 1 or d.max() > D):
        raise InputFormatError(f"{path}: document id outside 1..{D}")
    if nnz and (w.min() < 1 or w.max() > W):
        raise InputFormatError(f"{path}: word id {int(w.max())} outside vocabulary 1..{W}")
    if nnz and cnt.min() < 1:
        raise InputFormatError(f"{path}: counts must be positive")
    return Corpus(sp.csr_matrix((cnt, (d - 1, w - 1)), shape=(D, W)), W)


def write_docword(path, c):
    X = c.counts.tocoo()
    order = np.lexsort((X.col, X.row))
    with open(path, "w") as fh:
        fh.write(f"{c.D}\n{c.V}\n{X.nnz}\n")
        for r, w, n in zip(X.row[order], X.col[order], X.data[order]):
            fh.write(f"{r + 1} {w + 1} {n}\n")


def read_vocab(path):
    with open(path) as fh:
        return [line.rstrip("\n") for line in fh]


def model_to_json(model, vocabulary=None):
    return {
        "k": model.k,
        "V": model.V,
        "alpha": model.alpha.tolist(),
        "alpha0": model.alpha0,
        "Phi": model.Phi.T.tolist(),  # column-major: one list per topic
        "vocabulary": vocabulary,
    }


def model_from_json(obj):
    return LdaModel(np.asarray(obj["Phi"], dtype=np.float64).T, obj["alpha"])


def save_model(path, model, vocabulary=None):
    with open(path, "w") as fh:
        json.dump(model_to_json(model, vocabulary), fh, sort_keys=True)


def fit_spectral_lda(c, k, alpha0=1.0, b=4096, B=20, L=30, T_iters=30, seed=0, method="fast",
                     cross_term="unbiased"):
    """Moments, whitening, whitened third moment, decomposition, recovery.

    ``method="fast"`` sketches the whitened third moment and runs the sketched
    power method; ``method="exact"`` builds it densely and runs the exact one.

    Returns
    -------
    model : LdaModel
    timings : dict
        Milliseconds per phase.
    """
    from sketchcp.decompose import PowerConfig, robust_tpm_exact, robust_tpm_fast
    from sketchcp.sketch import SymTensorSketchSet

    clock = _Clock()
    M2 = compute_m2(c, alpha0)
    clock.lap("moments")
    wm = whiten(M2, k)
    clock.lap("whitening")
    cfg = PowerConfig(k=k, L=L, T_iters=T_iters, b=b, B=B, seed=seed)
    if method == "fast":
        sset = sketch_whitened_m3(c, wm, alpha0, SymTensorSketchSet.create(k, b, B, seed), cross_term)
        clock.lap("sketch")
        D, _ = robust_tpm_fast(sset, k, cfg)
    elif method == "exact":
        T3 = whitened_m3_dense(c, wm, alpha0, cross_term)
        clock.lap("sketch")
        D = robust_tpm_exact((T3 + T3.transpose(0, 2, 1) + T3.transpose(1, 0, 2) + T3.transpose(1, 2, 0)
                              + T3.transpose(2, 0, 1) + T3.transpose(2, 1, 0)) / 6.0, cfg)
    else:
        raise ValueError(f"unknown method {method!r}")
    clock.lap("decomposition")
    model = recover_params(D, wm, alpha0)
    clock.lap("recovery")
    model.info.update(eigenvalues=np.asarray(D.lambdas).tolist())
    return model, clock.laps


class _Clock:
    def __init__(self):
        self._last = time.perf_counter()
        self.laps = {}

    def lap(self, name):
        now = time.perf_counter()
        self.laps[name] = (now - self._last) * 1e3
        self._last = now
