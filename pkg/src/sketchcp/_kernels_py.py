"""Pure numpy implementations of the hot loops in ``_kernels.pyx``."""
import numpy as np


def poly_hash_eval(coeffs, x, p, b):
    coeffs = np.asarray(coeffs, dtype=np.uint64)
    x = np.asarray(x, dtype=np.uint64)
    p = np.uint64(p)
    acc = np.zeros(x.shape, dtype=np.uint64)
    # acc < p < 2**31 and x < 2**31, so acc * x + c stays below 2**63
    for c in coeffs[::-1]:
        acc = (acc * x + c) % p
    return (acc % np.uint64(b)).astype(np.int64)


def sketch_columns(vals, buckets, signs, b):
    """out[m, l, buckets[m, i]] += signs[m, i] * vals[l, i]."""
    vals = np.asarray(vals, dtype=np.float64)
    L, n = vals.shape
    B = buckets.shape[0]
    out = np.empty((B, L, b), dtype=np.complex128)
    offsets = (np.arange(L) * b)[:, None]
    for m in range(B):
        w = signs[m][None, :] * vals
        idx = (offsets + buckets[m][None, :]).ravel()
        re = np.bincount(idx, weights=w.real.ravel(), minlength=L * b)
        im = np.bincount(idx, weights=w.imag.ravel(), minlength=L * b)
        out[m] = (re + 1j * im).reshape(L, b)
    return out


def _multiplicity(i, j, k):
    m = np.full(np.broadcast(i, j, k).shape, 6.0)
    m[(i == j) | (j == k)] = 3.0
    m[(i == j) & (j == k)] = 1.0
    return m


def sym_dense_sketch(T, h, sigma, b):
    n = T.shape[0]
    re = np.zeros(b)
    im = np.zeros(b)
    jj, kk = np.triu_indices(n)
    for i in range(n):
        sel = jj >= i
        j, k = jj[sel], kk[sel]
        t = T[i, j, k]
        w = _multiplicity(i, j, k) * t * (sigma[i] * sigma[j] * sigma[k])
        idx = (h[i] + h[j] + h[k]) % b
        re += np.bincount(idx, weights=w.real, minlength=b)
        im += np.bincount(idx, weights=w.imag, minlength=b)
    return re + 1j * im


def asym_dense_sketch(T, h1, h2, h3, s1, s2, s3, b):
    n = T.shape[0]
    out = np.zeros(b)
    plane_idx = h2[:, None] + h3[None, :]
    plane_sign = s2[:, None] * s3[None, :]
    for i in range(n):
        idx = ((h1[i] + plane_idx) % b).ravel()
        out += np.bincount(idx, weights=(s1[i] * plane_sign * T[i]).ravel(), minlength=b)
    return out.astype(np.complex128)


def spectrum_sym_ivv(S, F):
    """In place: F[0] <- S conj(F[0]); F[1] <- S (conj(F[0])**2 + conj(F[1])) / 6."""
    S = S[:, None, :]
    np.conjugate(F, out=F)
    F[1] += F[0] * F[0]
    F[1] *= S
    F[1] /= 6.0
    F[0] *= S


def spectrum_sym_vvv(S, F):
    Fu, F2 = F
    z = Fu * Fu
    z /= 6.0
    z += 0.5 * F2
    z *= Fu
    return np.einsum("mlf,mf->ml", z.real, S.real) + np.einsum("mlf,mf->ml", z.imag, S.imag)


def spectrum_corr2(S, F):
    F[0] *= F[1]
    np.conjugate(F[0], out=F[0])
    F[0] *= S[:, None, :]


def spectrum_inner3(S, F):
    z = F[0] * F[1]
    z *= F[2]
    return np.einsum("mlf,mf->ml", z.real, S.real) + np.einsum("mlf,mf->ml", z.imag, S.imag)
