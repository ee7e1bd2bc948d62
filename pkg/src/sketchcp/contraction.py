"""Approximate tensor contractions evaluated directly on sketches.

Every estimator is an inner product <s_T, s_X> between the tensor sketch and
the sketch of a rank-1 (or truncated rank-1) tensor X, evaluated in the
Fourier domain. With numpy's unnormalized forward transform,
``sum_t x[t] conj(y[t]) = (1/b) sum_f X[f] conj(Y[f])``.

For the vector-valued contractions the terms that do not depend on the
output coordinate i are moved to the left of the inner product, so one
inverse transform per replicate serves all n coordinates: with
``r = IFFT(FFT(s_T) * conj(FFT(y)))`` we have
``<s_T, s_{e_i} * y> = conj(sign(i)) * r[bucket(i)]``.

All functions accept a vector ``u`` of shape (n,) or a batch (n, L). With
``aggregate=True`` they return the median over replicates of the real
parts; with ``aggregate=False`` the raw per-replicate estimates, with the
replicate axis first.
"""
import numpy as np

from sketchcp import _fft, kernels
from sketchcp.sketch import CHUNK_ELEMENTS, SPECTRUM_TABLE_ELEMENTS


class ContractionWorkspace:
    """Per-set cache of FFT(s_T) plus counters of batched transform calls.

    The cache is keyed by the set's ``version`` (bumped by in-place
    deflation) and the identity of its data buffer.
    """

    def __init__(self, sset):
        self.sset = sset
        self.forward_calls = 0
        self.inverse_calls = 0
        self._key = None
        self._transform = None

    def data_transform(self):
        key = (self.sset.version, id(self.sset.data))
        if key != self._key:
            self._transform = np.ascontiguousarray(self.fft(self.sset.data))
            self._key = key
        return self._transform

    def fft(self, x, overwrite=False):
        self.forward_calls += 1
        return _fft.fft(x, overwrite)

    def ifft(self, x, overwrite=False):
        self.inverse_calls += 1
        return _fft.ifft(x, overwrite)

    def reset_counters(self):
        self.forward_calls = self.inverse_calls = 0


def workspace(sset):
    ws = getattr(sset, "_workspace", None)
    if ws is None:
        ws = ContractionWorkspace(sset)
        sset._workspace = ws
    return ws


def _columns(u, n):
    u = np.asarray(u, dtype=np.float64)
    if u.shape[0] != n:
        raise ValueError(f"vector length {u.shape[0]} does not match sketch dimension {n}")
    return u.reshape(n, -1), u.ndim == 1


def _col_chunks(sset, L, stacked):
    step = max(1, CHUNK_ELEMENTS // (stacked * sset.B * sset.b))
    for start in range(0, L, step):
        yield slice(start, min(L, start + step))


def _spectra(ws, sketches):
    """Stack count sketches (each (B, l, b)) and transform them in one batched call."""
    F = np.empty((len(sketches),) + sketches[0].shape, dtype=np.complex128)
    for j, s in enumerate(sketches):
        F[j] = s
    return ws.fft(F, overwrite=True)


def _finish(est, single, aggregate):
    """est has shape (B, L) or (B, L, n); reduce and reshape for the caller."""
    if est.ndim == 3:
        est = np.swapaxes(est, 1, 2)  # (B, n, L)
    out = np.median(est, axis=0) if aggregate else est
    if single:
        out = out[..., 0]
        if out.ndim == 0:
            return float(out)
    return out


# ---------------------------------------------------------------- asymmetric


def approx_vvv_asym(aset, u, aggregate=True):
    """T(u, u, u) ~ Re <s_T, s_{u (x) u (x) u}>."""
    U, single = _columns(u, aset.n)
    ws = workspace(aset)
    S = ws.data_transform()
    est = np.empty((aset.B, U.shape[1]))
    for sl in _col_chunks(aset, U.shape[1], 3):
        cols = U[:, sl]
        F = _spectra(ws, [aset.slot_sketch(j, cols) for j in range(3)])
        est[:, sl] = kernels.spectrum_inner3(S, F) / aset.b
    return _finish(est, single, aggregate)


def approx_mode_asym(aset, mode, x, y, aggregate=True):
    """Contract the two modes other than ``mode`` with x and y (in mode order).

    mode 0 gives T(I, x, y), mode 1 gives T(x, I, y), mode 2 gives T(x, y, I).
    """
    others = [j for j in range(3) if j != mode]
    Xc, single = _columns(x, aset.n)
    Yc, _ = _columns(y, aset.n)
    if Xc.shape != Yc.shape:
        raise ValueError("contraction vectors must have matching shapes")
    ws = workspace(aset)
    S = ws.data_transform()
    L = Xc.shape[1]
    h = aset.buckets[:, mode]  # (B, n)
    s = aset.sign_table[:, mode]
    est = np.empty((aset.B, L, aset.n))
    rows = np.arange(aset.B)[:, None]
    for sl in _col_chunks(aset, L, 2):
        F = _spectra(ws, [aset.slot_sketch(others[0], Xc[:, sl]), aset.slot_sketch(others[1], Yc[:, sl])])
        F = kernels.spectrum_corr2(S, F)
        r = ws.ifft(F[0], overwrite=True)  # (B, l, b)
        # v[m, l, i] = s[m, i] * r[m, l, h[m, i]]
        est[:, sl] = s[:, None, :] * np.real(np.swapaxes(r[rows, :, h], 1, 2))
    return _finish(est, single, aggregate)


def approx_Ibc_asym(aset, bvec, cvec, aggregate=True):
    """T(I, b, c) via one inverse transform per replicate and an O(n) read-off."""
    return approx_mode_asym(aset, 0, bvec, cvec, aggregate)


def approx_Ivv_asym(aset, u, aggregate=True):
    """T(I, u, u); the read-off is v_i = xi1(i) * sbar[h1(i)]."""
    return approx_mode_asym(aset, 0, u, u, aggregate)


# ----------------------------------------------------------------- symmetric


def _cube_readoff(sset):
    """Re(conj(sigma(i)^3) s_T[3h(i)]), shape (B, n)."""
    return np.real(np.conj(sset.sigma3) * sset.data[np.arange(sset.B)[:, None], sset.buckets3])


def _use_forms(sset):
    """Whether the per-replicate cubic forms are cheaper than transforming each vector."""
    return sset.n**3 <= sset.b and 2 * sset.B * sset.n * sset.b <= SPECTRUM_TABLE_ELEMENTS


def _cubic_forms(ws, sset):
    """Coefficients of the symmetric estimators as per-replicate cubic forms in u.

    With E1[i] and E2[i] the spectra of the base and square sketches of e_i,
    the vvv estimator of replicate m is exactly

        A_m(u, u, u) + sum_ik u_i^2 u_k C_m[i, k] + sum_i c_m[i] u_i^3

    where A_m[i, j, k] = Re sum_f S conj(E1_i E1_j E1_k) / (6 b),
    C_m[i, k] = Re sum_f S conj(E2_i E1_k) / (2 b) and c_m is a third of the
    cube read-off. Cached per data version like the data transform.
    """
    key = (sset.version, id(sset.data))
    if getattr(ws, "_forms_key", None) != key:
        S = ws.data_transform()
        E1, E2 = sset.spectrum_tables()
        B, n, b = sset.B, sset.n, sset.b
        A = np.empty((B, n, n, n))
        C = np.empty((B, n, n))
        for m in range(B):
            Q = (S[m] * np.conj(E1[m])).T  # (b, n)
            pairs = (np.conj(E1[m])[:, None, :] * np.conj(E1[m])[None, :, :]).reshape(n * n, b)
            A[m] = (pairs @ Q).real.reshape(n, n, n) / (6.0 * b)
            C[m] = (np.conj(E2[m]) @ Q).real / (2.0 * b)
        ws._forms = (A, C, _cube_readoff(sset) / 3.0)
        ws._forms_key = key
    return ws._forms


def approx_vvv_sym(sset, u, aggregate=True):
    """T(u, u, u) ~ Re <s_T, (1/6) s_u^{*3} + (1/2) s_{2,uu} * s_u + (1/3) s_{3,uuu}>.

    The last term is read off directly from the buckets 3h(i), which avoids
    a third forward transform.
    """
    U, single = _columns(u, sset.n)
    ws = workspace(sset)
    if _use_forms(sset):
        A, C, c = _cubic_forms(ws, sset)
        AUU = np.einsum("mijk,jl,kl->mil", A, U, U)
        est = np.einsum("mil,il->ml", AUU + np.einsum("mik,kl->mil", C, U) * U, U) + c @ U**3
        return _finish(est, single, aggregate)
    S = ws.data_transform()
    est = _cube_readoff(sset) @ U**3 / 3.0
    for sl in _col_chunks(sset, U.shape[1], 2):
        cols = U[:, sl]
        F = _spectra(ws, [sset.base_sketch(cols), sset.square_sketch(cols)])
        est[:, sl] += kernels.spectrum_sym_vvv(S, F) / sset.b
    return _finish(est, single, aggregate)


def approx_Ivv_sym(sset, u, aggregate=True):
    """T(I, u, u) from a symmetric sketch.

    With Z_i = e_i(x)u(x)u + u(x)e_i(x)u + u(x)u(x)e_i, the truncated-sketch
    derivative gives, per coordinate,

        v_i = Re[ conj(s(i))    r1[h(i)]
                + (1/3) u_i   conj(s(i)^2) r2[2h(i)]
                + (1/3) u_i^2 conj(s(i)^3) s_T[3h(i)] ]

    where r1 = IFFT(S (conj(Fu)^2 + conj(F2)) / 6) and r2 = IFFT(S conj(Fu)).
    Summing u_i v_i over i reproduces approx_vvv_sym exactly. When n**3 <= b
    both estimators are evaluated through the cached cubic forms of
    ``_cubic_forms``, which gives the same values without transforming u.
    """
    U, single = _columns(u, sset.n)
    ws = workspace(sset)
    if _use_forms(sset):
        A, C, c = _cubic_forms(ws, sset)
        v = (np.einsum("mijk,jl,kl->mil", A, U, U) + 2.0 / 3.0 * U * np.einsum("mik,kl->mil", C, U)
             + np.einsum("mik,il->mkl", C, U * U) / 3.0 + c[:, :, None] * U**2)
        return _finish(np.swapaxes(v, 1, 2), single, aggregate)
    S = ws.data_transform()
    B, n, L = sset.B, sset.n, U.shape[1]
    rows = np.arange(B)[:, None]
    cube = _cube_readoff(sset)
    est = np.empty((B, L, n))
    for sl in _col_chunks(sset, L, 2):
        cols = U[:, sl]
        F = _spectra(ws, [sset.base_sketch(cols), sset.square_sketch(cols)])
        r = ws.ifft(kernels.spectrum_sym_ivv(S, F), overwrite=True)  # r[0] = r2, r[1] = r1
        t1 = np.real(np.conj(sset.sigma)[:, :, None] * r[1][rows, :, sset.buckets])  # (B, n, l)
        t2 = np.real(np.conj(sset.sigma2)[:, :, None] * r[0][rows, :, sset.buckets2])
        v = t1 + t2 * cols[None] / 3.0 + cube[:, :, None] * cols[None] ** 2 / 3.0
        est[:, sl] = np.swapaxes(v, 1, 2)
    return _finish(est, single, aggregate)
