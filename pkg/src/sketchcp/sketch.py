"""Count sketches and third-order tensor sketches.

Two families are provided:

* asymmetric tensor sketches: per replicate three independent 2-wise hashes
  h1, h2, h3 and Rademacher signs xi1, xi2, xi3; entry (i, j, k) goes to
  bucket (h1(i) + h2(j) + h3(k)) mod b with sign xi1(i) xi2(j) xi3(k).
* symmetric ("colliding") sketches: one 6-wise hash h and complex
  fourth-root-of-unity signs sigma shared by all three modes, so all
  permutations of (i, j, k) land in the same bucket.

A sketch set holds ``B`` independent replicates as a (B, b) complex array.
All sketching is linear, and sketches of rank-1 tensors are circular
convolutions of count sketches, computed with FFTs.
"""
import struct
from dataclasses import dataclass, field

import numpy as np

from sketchcp import _fft, kernels
from sketchcp.errors import InputFormatError
from sketchcp.hashing import (
    STREAM_SKETCH,
    PolyHash,
    SignGenerator,
    derive_seed,
    eval_hash,
    new_poly_hash,
    new_sign_generator,
    sign_eval,
)
from sketchcp.tensor_core import as_dense, first_asymmetric_triple

# cap on the number of complex entries held in one batched FFT buffer
CHUNK_ELEMENTS = 1 << 22
# cap on the complex entries of a symmetric set's per-coordinate spectrum tables
SPECTRUM_TABLE_ELEMENTS = 1 << 23


def check_power_of_two(b):
    if b < 2 or b & (b - 1):
        raise ValueError(f"sketch length must be a power of two >= 2, got {b}")


def _chunks(total, per_item):
    step = max(1, CHUNK_ELEMENTS // max(1, per_item))
    for start in range(0, total, step):
        yield slice(start, min(total, start + step))


def _as_columns(u, n):
    u = np.asarray(u, dtype=np.float64)
    if u.shape[0] != n:
        raise ValueError(f"vector length {u.shape[0]} does not match sketch dimension {n}")
    return u.reshape(n, -1), u.ndim == 1


@dataclass
class CountSketch:
    data: np.ndarray
    slot: int = 0
    hash: PolyHash = None
    sign: SignGenerator = None


def sketch_vector(u, h, s, b=None, slot=0):
    """data[t] = sum over h(i) = t of sign(i) * u[i].

    ``h`` and ``s`` are a PolyHash/SignGenerator pair or explicit bucket and
    sign tables (then ``b`` is required).
    """
    u = np.asarray(u, dtype=np.float64)
    idx = np.arange(u.size)
    if isinstance(h, PolyHash):
        b = h.b
        buckets = eval_hash(h, idx)
    else:
        buckets = np.asarray(h, dtype=np.int64)
    signs = sign_eval(s, idx) if isinstance(s, SignGenerator) else np.asarray(s)
    if b is None:
        raise ValueError("b is required with explicit bucket tables")
    w = signs * u
    data = np.bincount(buckets, weights=np.real(w), minlength=b) + 1j * np.bincount(
        buckets, weights=np.imag(w), minlength=b
    )
    return CountSketch(data, slot, h if isinstance(h, PolyHash) else None,
                       s if isinstance(s, SignGenerator) else None)


def circular_convolve(x, y):
    """z[t] = sum over (i + j) mod b = t of x[i] y[j], via the FFT."""
    x = np.asarray(x, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    if x.shape[-1] != y.shape[-1]:
        raise ValueError("convolution operands differ in length")
    check_power_of_two(x.shape[-1])
    return _fft.ifft(_fft.fft(x) * _fft.fft(y))


@dataclass(eq=False)
class AsymTensorSketchSet:
    """B replicates of an asymmetric tensor sketch of an n-dimensional tensor."""

    n: int
    b: int
    hashes: tuple  # B tuples of (h1, h2, h3)
    signs: tuple  # B tuples of (xi1, xi2, xi3)
    data: np.ndarray = None
    seed: int = 0
    version: int = field(default=0, compare=False)

    mode = "asym"

    def __post_init__(self):
        check_power_of_two(self.b)
        if self.data is None:
            self.data = np.zeros((self.B, self.b), dtype=np.complex128)
        self.data = np.ascontiguousarray(self.data, dtype=np.complex128)
        idx = np.arange(self.n)
        self.buckets = np.array([[eval_hash(h, idx) for h in hs] for hs in self.hashes], dtype=np.int64)
        self.sign_table = np.array([[sign_eval(s, idx) for s in ss] for ss in self.signs], dtype=np.float64)

    @classmethod
    def create(cls, n, b, B, seed):
        check_power_of_two(b)
        hashes, signs = [], []
        for m in range(B):
            hashes.append(tuple(new_poly_hash(2, b, derive_seed(seed, STREAM_SKETCH, m, j)) for j in range(3)))
            signs.append(tuple(new_sign_generator("rademacher", derive_seed(seed, STREAM_SKETCH, m, 3 + j))
                               for j in range(3)))
        return cls(n, b, tuple(hashes), tuple(signs), seed=seed)

    @property
    def B(self):
        return len(self.hashes)

    def with_data(self, data):
        out = AsymTensorSketchSet(self.n, self.b, self.hashes, self.signs, np.array(data), self.seed)
        return out

    def copy(self):
        return self.with_data(self.data)

    def slot_sketch(self, slot, X, replicate=None):
        """Count sketches of the columns of X under hash slot 0, 1 or 2: (B, L, b)."""
        rows = slice(None) if replicate is None else slice(replicate, replicate + 1)
        return kernels.sketch_columns(X.T, self.buckets[rows, slot], self.sign_table[rows, slot], self.b)


@dataclass(eq=False)
class SymTensorSketchSet:
    """B replicates of a symmetric (colliding-hash) tensor sketch."""

    n: int
    b: int
    hashes: tuple  # B PolyHash, 6-wise
    signs: tuple  # B SignGenerator, complex4
    data: np.ndarray = None
    seed: int = 0
    version: int = field(default=0, compare=False)

    mode = "sym"

    def __post_init__(self):
        check_power_of_two(self.b)
        if self.data is None:
            self.data = np.zeros((self.B, self.b), dtype=np.complex128)
        self.data = np.ascontiguousarray(self.data, dtype=np.complex128)
        idx = np.arange(self.n)
        self.buckets = np.array([eval_hash(h, idx) for h in self.hashes], dtype=np.int64).reshape(self.B, self.n)
        self.sigma = np.array([sign_eval(s, idx) for s in self.signs], dtype=np.complex128).reshape(self.B, self.n)
        self.buckets2 = (2 * self.buckets) % self.b
        self.buckets3 = (3 * self.buckets) % self.b
        self.sigma2 = self.sigma**2
        self.sigma3 = self.sigma**3

    @classmethod
    def create(cls, n, b, B, seed):
        check_power_of_two(b)
        hashes = tuple(new_poly_hash(6, b, derive_seed(seed, STREAM_SKETCH, m, 0)) for m in range(B))
        signs = tuple(new_sign_generator("complex4", derive_seed(seed, STREAM_SKETCH, m, 1)) for m in range(B))
        return cls(n, b, hashes, signs, seed=seed)

    @property
    def B(self):
        return len(self.hashes)

    def with_data(self, data):
        out = SymTensorSketchSet(self.n, self.b, self.hashes, self.signs, np.array(data), self.seed)
        out._tables = getattr(self, "_tables", None)
        return out

    def copy(self):
        return self.with_data(self.data)

    def base_sketch(self, X, replicate=None):
        rows = slice(None) if replicate is None else slice(replicate, replicate + 1)
        return kernels.sketch_columns(X.T, self.buckets[rows], self.sigma[rows], self.b)

    def square_sketch(self, X, replicate=None):
        """Sketch of X * X with bucket 2h(i) and sign sigma(i)**2."""
        rows = slice(None) if replicate is None else slice(replicate, replicate + 1)
        return kernels.sketch_columns((X * X).T, self.buckets2[rows], self.sigma2[rows], self.b)

    def uses_spectrum_tables(self):
        """Whether spectra of vectors are formed from per-coordinate tables.

        The spectrum of a count sketch of an n-vector is a sum of n
        per-coordinate spectra, so a dense (n, b) product replaces the FFT.
        That costs O(n b) per vector against O(b log b) and wins when n is
        at most log2(b), the regime of whitened topic-model tensors.
        """
        return self.n <= self.b.bit_length() - 1 and 2 * self.B * self.n * self.b <= SPECTRUM_TABLE_ELEMENTS

    def spectrum_tables(self):
        """FFTs of the base and square sketches of e_1..e_n: two (B, n, b) arrays, cached."""
        if getattr(self, "_tables", None) is None:
            eye = np.eye(self.n)
            self._tables = (_fft.fft(self.base_sketch(eye)), _fft.fft(self.square_sketch(eye)))
        return self._tables

    def base_spectrum(self, X):
        """FFT of the base sketches of the columns of X, (B, L, b)."""
        if self.uses_spectrum_tables():
            return np.matmul(np.asarray(X, dtype=np.complex128).T, self.spectrum_tables()[0])
        return _fft.fft(self.base_sketch(X))

    def cube_sketch(self, X, replicate=None):
        rows = slice(None) if replicate is None else slice(replicate, replicate + 1)
        return kernels.sketch_columns((X**3).T, self.buckets3[rows], self.sigma3[rows], self.b)


def _pick(arr, replicate, single):
    """Shape a (B, L, b) result for the caller."""
    if single:
        arr = arr[:, 0]
    if replicate is not None:
        arr = arr[0]
    return arr


# ---------------------------------------------------------------- asymmetric


def sketch_dense_asym(T, aset):
    """Sketch a dense tensor with the O(n**3) defining sum; returns a new set."""
    T = as_dense(T)
    if T.n != aset.n:
        raise ValueError(f"tensor dimension {T.n} != sketch dimension {aset.n}")
    data = np.empty_like(aset.data)
    for m in range(aset.B):
        h, s = aset.buckets[m], aset.sign_table[m]
        data[m] = kernels.asym_dense_sketch(T.array, h[0], h[1], h[2], s[0], s[1], s[2], aset.b)
    return aset.with_data(data)


def sketch_rank1_asym(u, v, w, aset, replicate=None):
    """Sketch of u (x) v (x) w as IFFT(FFT(s1_u) * FFT(s2_v) * FFT(s3_w)).

    Returns (B, b), or (b,) when ``replicate`` is given. 2-d inputs sketch
    column-wise and add a column axis.
    """
    U, single = _as_columns(u, aset.n)
    V, _ = _as_columns(v, aset.n)
    W, _ = _as_columns(w, aset.n)
    F = (_fft.fft(aset.slot_sketch(0, U, replicate)) * _fft.fft(aset.slot_sketch(1, V, replicate))
         * _fft.fft(aset.slot_sketch(2, W, replicate)))
    return _pick(_fft.ifft(F), replicate, single)


def sketch_factored(F, aset):
    """Sketch sum_i a_i u_i (x) v_i (x) w_i in O(N (n + b log b)); returns a new set."""
    if F.n != aset.n:
        raise ValueError(f"factored dimension {F.n} != sketch dimension {aset.n}")
    acc = np.zeros((aset.B, aset.b), dtype=np.complex128)
    for sl in _chunks(F.N, aset.B * aset.b):
        prod = (_fft.fft(aset.slot_sketch(0, F.U[:, sl])) * _fft.fft(aset.slot_sketch(1, F.V[:, sl]))
                * _fft.fft(aset.slot_sketch(2, F.W[:, sl])))
        acc += np.einsum("mlb,l->mb", prod, F.weights[sl])
    return aset.with_data(_fft.ifft(acc))


def recover_entry_asym(aset, i, j, k, aggregate=True):
    """Median over replicates of Re(xi1(i) xi2(j) xi3(k) s_T[H(i, j, k)])."""
    h, s = aset.buckets, aset.sign_table
    t = (h[:, 0, i] + h[:, 1, j] + h[:, 2, k]) % aset.b
    est = (s[:, 0, i] * s[:, 1, j] * s[:, 2, k] * aset.data[np.arange(aset.B), t]).real
    return float(np.median(est)) if aggregate else est


# ----------------------------------------------------------------- symmetric


def sketch_dense_sym(T, sset, check_symmetric=True, atol=1e-9):
    """Colliding-hash sketch of a symmetric dense tensor; returns a new set.

    Only sorted triples i <= j <= k are visited, each weighted by its number
    of distinct permutations, which equals the unrestricted sum.
    """
    T = as_dense(T)
    if T.n != sset.n:
        raise ValueError(f"tensor dimension {T.n} != sketch dimension {sset.n}")
    if check_symmetric:
        bad = first_asymmetric_triple(T, atol)
        if bad is not None:
            raise ValueError(f"tensor is not symmetric at triple {tuple(x + 1 for x in bad)} (1-indexed)")
    data = np.empty_like(sset.data)
    for m in range(sset.B):
        data[m] = kernels.sym_dense_sketch(T.array, sset.buckets[m], sset.sigma[m], sset.b)
    return sset.with_data(data)


def sym_aux_sketches(u, sset, replicate=None):
    """(s_u, s_{2,u*u}, s_{3,u*u*u}) with buckets h(i), 2h(i), 3h(i) mod b."""
    U, single = _as_columns(u, sset.n)
    return tuple(_pick(s, replicate, single) for s in
                 (sset.base_sketch(U, replicate), sset.square_sketch(U, replicate), sset.cube_sketch(U, replicate)))


def sketch_rank1_sym(u, sset, replicate=None):
    """Sketch of the upper-triangular part of u^(x)3.

    (1/6) s_u*s_u*s_u + (1/2) s_{2,uu}*s_u + (1/3) s_{3,uuu}; the three
    coefficients sum to one on the diagonal class, and each off-diagonal
    class is hit with total weight one as well.
    """
    U, single = _as_columns(u, sset.n)
    Fu = _fft.fft(sset.base_sketch(U, replicate))
    F2 = _fft.fft(sset.square_sketch(U, replicate))
    out = _fft.ifft(Fu**3 / 6.0 + F2 * Fu / 2.0) + sset.cube_sketch(U, replicate) / 3.0
    return _pick(out, replicate, single)


def sketch_full_rank1_sym(u, sset, replicate=None):
    """Colliding-hash sketch of the full tensor u^(x)3 (all n**3 entries)."""
    U, single = _as_columns(u, sset.n)
    return _pick(_fft.ifft(_fft.fft(sset.base_sketch(U, replicate)) ** 3), replicate, single)


def sketch_factored_sym(F, sset):
    """Colliding-hash sketch of a symmetric FactoredTensor; returns a new set."""
    if not F.symmetric:
        raise ValueError("symmetric sketches need a symmetric factored tensor")
    acc = np.zeros((sset.B, sset.b), dtype=np.complex128)
    for sl in _chunks(F.N, sset.B * sset.b):
        acc += np.einsum("mlb,l->mb", _fft.fft(sset.base_sketch(F.U[:, sl])) ** 3, F.weights[sl])
    return sset.with_data(_fft.ifft(acc))


def add_scaled_rank1_sym(sset, u, alpha):
    """In place: data += alpha * sketch(u^(x)3), the full tensor, as used by deflation."""
    if alpha != 0.0:
        sset.data += alpha * sketch_full_rank1_sym(u, sset)
        sset.version += 1
    return sset


def _kappa(i, j, k):
    if i == j == k:
        return 1.0
    if i == j or j == k or i == k:
        return 3.0
    return 6.0


def recover_entry_sym(sset, i, j, k, aggregate=True):
    """Median of Re((1/kappa) conj(sigma(i) sigma(j) sigma(k)) s[H(i, j, k)])."""
    t = (sset.buckets[:, i] + sset.buckets[:, j] + sset.buckets[:, k]) % sset.b
    sig = sset.sigma[:, i] * sset.sigma[:, j] * sset.sigma[:, k]
    est = (np.conj(sig) * sset.data[np.arange(sset.B), t]).real / _kappa(i, j, k)
    return float(np.median(est)) if aggregate else est


# ------------------------------------------------------------- serialization

MAGIC = b"SKCP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHBQQQQ")


def _pack_hash(h):
    return struct.pack("<BQ", h.independence, h.b) + np.asarray(h.coeffs, dtype="<u8").tobytes()


def _unpack_hash(buf, off):
    indep, b = struct.unpack_from("<BQ", buf, off)
    off += 9
    coeffs = np.frombuffer(buf, dtype="<u8", count=indep, offset=off)
    return PolyHash(tuple(int(c) for c in coeffs), int(b)), off + 8 * indep


def sketch_to_bytes(sset):
    """Binary container: header, then per replicate hash coefficients and data."""
    mode = 1 if sset.mode == "sym" else 0
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, mode, sset.n, sset.b, sset.B, sset.seed)]
    for m in range(sset.B):
        if mode:
            hs = [sset.hashes[m], sset.signs[m].backing]
        else:
            hs = list(sset.hashes[m]) + [s.backing for s in sset.signs[m]]
        parts.append(struct.pack("<B", len(hs)))
        parts.extend(_pack_hash(h) for h in hs)
        parts.append(np.ascontiguousarray(sset.data[m]).astype("<c16").tobytes())
    return b"".join(parts)


def sketch_from_bytes(buf):
    try:
        magic, version, mode, n, b, B, seed = _HEADER.unpack_from(buf, 0)
    except struct.error:
        raise InputFormatError("sketch file too short for header") from None
    if magic != MAGIC:
        raise InputFormatError("not a sketch file (bad magic)")
    if version != FORMAT_VERSION:
        raise InputFormatError(f"unsupported sketch format version {version}")
    off = _HEADER.size
    hashes, signs, data = [], [], np.empty((B, b), dtype=np.complex128)
    try:
        for m in range(B):
            (count,) = struct.unpack_from("<B", buf, off)
            off += 1
            hs = []
            for _ in range(count):
                h, off = _unpack_hash(buf, off)
                hs.append(h)
            data[m] = np.frombuffer(buf, dtype="<c16", count=b, offset=off)
            off += 16 * b
            if mode:
                hashes.append(hs[0])
                signs.append(SignGenerator("complex4", hs[1]))
            else:
                hashes.append(tuple(hs[:3]))
                signs.append(tuple(SignGenerator("rademacher", h) for h in hs[3:]))
    except (struct.error, ValueError) as exc:
        raise InputFormatError(f"truncated or corrupt sketch file: {exc}") from None
    if off != len(buf):
        raise InputFormatError("trailing bytes after sketch data")
    cls = SymTensorSketchSet if mode else AsymTensorSketchSet
    return cls(int(n), int(b), tuple(hashes), tuple(signs), data, int(seed))


def save_sketch(path, sset):
    with open(path, "wb") as fh:
        fh.write(sketch_to_bytes(sset))


def load_sketch(path):
    with open(path, "rb") as fh:
        return sketch_from_bytes(fh.read())
