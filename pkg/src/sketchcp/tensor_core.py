"""Exact third-order tensors, contractions and CP algebra.

Everything here is the exact (non-sketched) reference path. Tensors are
stored row-major, so entry (i, j, k) of an n x n x n tensor lives at flat
offset ``(i * n + j) * n + k`` and the mode-1 unfolding is a plain reshape.
"""
import itertools
from dataclasses import dataclass, field

import numpy as np

from sketchcp.errors import InputFormatError, MemoryCapError
from sketchcp.hashing import STREAM_PLANT, derive_seed

DEFAULT_MEMORY_CAP = 2 * 1024**3


@dataclass(frozen=True)
class DenseTensor3:
    """An explicit n x n x n real tensor."""

    array: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.array, dtype=np.float64)
        if a.flags.writeable or not a.flags.c_contiguous:
            # private copy so that freezing never touches the caller's buffer
            a = np.array(a, order="C")
        if a.ndim != 3 or not (a.shape[0] == a.shape[1] == a.shape[2]) or a.shape[0] < 1:
            raise ValueError(f"expected an n x n x n array, got shape {a.shape}")
        a.flags.writeable = False
        object.__setattr__(self, "array", a)

    @classmethod
    def from_entries(cls, n, entries):
        entries = np.asarray(entries, dtype=np.float64)
        if entries.size != n**3:
            raise ValueError(f"need n**3 = {n**3} entries, got {entries.size}")
        return cls(entries.reshape(n, n, n))

    @property
    def n(self):
        return self.array.shape[0]

    @property
    def entries(self):
        return self.array.ravel()

    def frobenius_norm(self):
        return float(np.linalg.norm(self.entries))

    def is_symmetric(self, atol=0.0):
        return first_asymmetric_triple(self, atol) is None


def as_dense(T):
    return T if isinstance(T, DenseTensor3) else DenseTensor3(T)


def _raw(T):
    """Array view of a DenseTensor3 or ndarray without copying."""
    a = T.array if isinstance(T, DenseTensor3) else np.asarray(T, dtype=np.float64)
    if a.ndim != 3 or not (a.shape[0] == a.shape[1] == a.shape[2]):
        raise ValueError(f"expected an n x n x n array, got shape {a.shape}")
    return a


def first_asymmetric_triple(T, atol=0.0):
    """Return the first (i, j, k), i <= j <= k, whose permutations disagree, else None."""
    a = as_dense(T).array
    worst = np.zeros(a.shape, dtype=bool)
    for perm in itertools.permutations(range(3)):
        worst |= np.abs(a - a.transpose(perm)) > atol
    if not worst.any():
        return None
    i, j, k = np.argwhere(worst)[0]
    return tuple(int(x) for x in sorted((i, j, k)))


@dataclass(frozen=True)
class FactoredTensor:
    """sum_i weights[i] * U[:, i] (x) V[:, i] (x) W[:, i].

    For a symmetric tensor ``V`` and ``W`` are the same array as ``U``.
    """

    weights: np.ndarray
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        mats = [np.asarray(m, dtype=np.float64).reshape(-1, w.size) for m in (self.U, self.V, self.W)]
        if len({m.shape for m in mats}) != 1:
            raise ValueError("factor matrices must share shape (n, N)")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "U", mats[0])
        object.__setattr__(self, "V", mats[0] if self.symmetric else mats[1])
        object.__setattr__(self, "W", mats[0] if self.symmetric else mats[2])

    @classmethod
    def from_symmetric(cls, weights, U):
        return cls(weights, U, U, U, symmetric=True)

    @property
    def n(self):
        return self.U.shape[0]

    @property
    def N(self):
        return self.weights.size

    def contract_vvv(self, u):
        """Factored fast path for T(u, u, u)."""
        return float(np.sum(self.weights * (self.U.T @ u) * (self.V.T @ u) * (self.W.T @ u)))


@dataclass(frozen=True)
class CPDecomposition:
    """sum_r lambdas[r] * A[:, r] (x) B[:, r] (x) C[:, r]."""

    lambdas: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    symmetric: bool = False
    info: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_symmetric(cls, lambdas, V, **info):
        V = np.asarray(V, dtype=np.float64)
        return cls(np.asarray(lambdas, dtype=np.float64), V, V, V, symmetric=True, info=info)

    @property
    def k(self):
        return self.lambdas.size

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def V(self):
        return self.A

    def to_dense(self):
        return DenseTensor3(np.einsum("r,ir,jr,kr->ijk", self.lambdas, self.A, self.B, self.C))


def _check_vec(n, *vs):
    for v in vs:
        if np.ndim(v) < 1 or np.shape(v)[0] != n:
            raise ValueError(f"vector of length {np.shape(v)[:1]} does not match tensor dimension {n}")


def contract_vvv_exact(T, u):
    """T(u, u, u) = sum_ijk T_ijk u_i u_j u_k."""
    a = _raw(T)
    u = np.asarray(u, dtype=np.float64)
    n = a.shape[0]
    _check_vec(n, u)
    return float(((a.reshape(n * n, n) @ u).reshape(n, n) @ u) @ u)


def contract_Ivv_exact(T, u, v):
    """T(I, u, v)_i = sum_jk T_ijk u_j v_k; 2-d ``u``/``v`` contract column-wise."""
    a = _raw(T)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    n = a.shape[0]
    _check_vec(n, u, v)
    if u.ndim == 1:
        return (a.reshape(n * n, n) @ v).reshape(n, n) @ u
    # batched columns: (n^2, n) @ (n, L) -> (n, n, L), then contract j with u
    M = (a.reshape(n * n, n) @ v).reshape(n, n, -1)
    return np.einsum("ijl,jl->il", M, u)


def contract_mode_exact(T, mode, x, y):
    """Contract the two modes other than ``mode`` with x and y (in mode order)."""
    a = _raw(T)
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    _check_vec(a.shape[0], x, y)
    spec = {0: "ijk,jr,kr->ir", 1: "ijk,ir,kr->jr", 2: "ijk,ir,jr->kr"}[mode]
    out = np.einsum(spec, a, x.reshape(a.shape[0], -1), y.reshape(a.shape[0], -1))
    return out[:, 0] if x.ndim == 1 else out


def mode1_unfold(T):
    """n x n**2 matrix whose row i lists T[i, j, k] with (j, k) row-major."""
    T = as_dense(T)
    return T.array.reshape(T.n, T.n * T.n)


def refold(M):
    M = np.asarray(M, dtype=np.float64)
    n = M.shape[0]
    if M.shape != (n, n * n):
        raise ValueError(f"expected an n x n**2 matrix, got {M.shape}")
    return DenseTensor3(M.reshape(n, n, n))


def khatri_rao(A, B):
    """Column-wise Kronecker product; column r is kron(A[:, r], B[:, r])."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ValueError(f"column counts differ: {A.shape} vs {B.shape}")
    return np.einsum("ir,jr->ijr", A, B).reshape(A.shape[0] * B.shape[0], A.shape[1])


def cp_residual(T, D):
    """Squared Frobenius norm of T - sum_r lambda_r a_r (x) b_r (x) c_r."""
    T = as_dense(T)
    if D.k == 0:
        return float(np.sum(T.array**2))
    if D.n != T.n:
        raise ValueError(f"decomposition dimension {D.n} != tensor dimension {T.n}")
    diff = T.array - D.to_dense().array
    return float(np.sum(diff * diff))


def random_orthonormal(n, k, rng):
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    Q = Q * np.sign(np.diag(R))
    return Q[:, :k]


def mirror_sorted(a):
    """Copy entry (sorted(i, j, k)) to every (i, j, k), giving a bit-exact symmetric array."""
    n = a.shape[0]
    idx = np.sort(np.stack(np.indices((n, n, n))), axis=0)
    return a[idx[0], idx[1], idx[2]]


def symmetric_noise(n, std, rng):
    """Gaussian tensor with entries drawn for i <= j <= k and mirrored to all permutations."""
    return mirror_sorted(rng.normal(0.0, std, size=(n, n, n)))


def synth_orthogonal_tensor(n, k, sigma, seed):
    """Planted tensor normalize(sum_i (1/i) v_i^(x)3) + E with orthonormal v_i.

    E is symmetric Gaussian noise with standard deviation ``sigma / n**1.5``
    per independent entry, so that E||E||_F^2 = sigma^2.

    Returns
    -------
    T : DenseTensor3
    truth : CPDecomposition
        Symmetric, eigenvalues after normalization. The raw eigenvalues
        1/i and the normalizer are in ``truth.info``.
    """
    if k > n:
        raise ValueError(f"rank k={k} exceeds dimension n={n}")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(derive_seed(seed, STREAM_PLANT))
    V = random_orthonormal(n, k, rng)
    raw = 1.0 / np.arange(1, k + 1)
    # orthonormal components: ||sum_i l_i v_i^3||_F^2 = sum_i l_i^2
    scale = float(np.sqrt(np.sum(raw**2)))
    lambdas = raw / scale
    clean = np.einsum("r,ir,jr,kr->ijk", lambdas, V, V, V)
    if sigma > 0:
        clean = clean + symmetric_noise(n, sigma / n**1.5, rng)
    clean = mirror_sorted(clean)
    truth = CPDecomposition.from_symmetric(lambdas, V, raw_lambdas=raw, normalizer=scale)
    return DenseTensor3(clean), truth


def materialize(F, memory_cap=DEFAULT_MEMORY_CAP):
    """Dense form of a FactoredTensor; refuses when n**3 doubles exceed ``memory_cap`` bytes."""
    need = 8 * F.n**3
    if need > memory_cap:
        raise MemoryCapError(f"materializing n={F.n} needs {need} bytes, cap is {memory_cap}")
    return DenseTensor3(np.einsum("r,ir,jr,kr->ijk", F.weights, F.U, F.V, F.W))


def read_coo(path):
    """Read the "n nnz [sym]" COO text format (1-indexed triples)."""
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    if not lines:
        raise InputFormatError(f"{path}: empty file")
    head = lines[0]
    try:
        n, nnz = int(head[0]), int(head[1])
    except (IndexError, ValueError):
        raise InputFormatError(f"{path}: bad header {' '.join(head)!r}") from None
    sym = len(head) > 2 and head[2] == "sym"
    if len(head) > 3 or (len(head) == 3 and not sym):
        raise InputFormatError(f"{path}: bad header {' '.join(head)!r}")
    if n < 1 or len(lines) - 1 != nnz:
        raise InputFormatError(f"{path}: header promises {nnz} entries, found {len(lines) - 1}")
    a = np.zeros((n, n, n))
    for lineno, parts in enumerate(lines[1:], start=2):
        try:
            i, j, k = (int(x) - 1 for x in parts[:3])
            value = float(parts[3])
        except (IndexError, ValueError):
            raise InputFormatError(f"{path}:{lineno}: malformed entry") from None
        if len(parts) != 4 or not all(0 <= x < n for x in (i, j, k)):
            raise InputFormatError(f"{path}:{lineno}: index out of range or trailing fields")
        if sym:
            for p in set(itertools.permutations((i, j, k))):
                a[p] = value
        else:
            a[i, j, k] = value
    return DenseTensor3(a), sym


def write_coo(path, T, symmetric=False):
    T = as_dense(T)
    a = T.array
    idx = np.argwhere(a != 0)
    if symmetric:
        idx = idx[(idx[:, 0] <= idx[:, 1]) & (idx[:, 1] <= idx[:, 2])]
    with open(path, "w") as fh:
        fh.write(f"{T.n} {len(idx)}{' sym' if symmetric else ''}\n")
        for i, j, k in idx:
            fh.write(f"{i + 1} {j + 1} {k + 1} {float(a[i, j, k])!r}\n")
