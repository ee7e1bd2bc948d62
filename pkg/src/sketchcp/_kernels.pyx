# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Every function here has a numpy twin in _kernels_py."""
import numpy as np

from libc.stdint cimport int64_t, uint64_t


def poly_hash_eval(const uint64_t[::1] coeffs, const int64_t[::1] x, uint64_t p, int64_t b):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t deg = coeffs.shape[0]
    cdef Py_ssize_t i, d
    cdef uint64_t acc, xi
    out = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] o = out
    for i in range(n):
        xi = <uint64_t>x[i]
        acc = 0
        for d in range(deg - 1, -1, -1):
            acc = (acc * xi + coeffs[d]) % p
        o[i] = <int64_t>(acc % <uint64_t>b)
    return out


def sketch_columns(const double[:, ::1] vals, const int64_t[:, ::1] buckets,
                   const double complex[:, ::1] signs, int64_t b):
    """out[m, l, buckets[m, i]] += signs[m, i] * vals[l, i]."""
    cdef Py_ssize_t L = vals.shape[0]
    cdef Py_ssize_t n = vals.shape[1]
    cdef Py_ssize_t B = buckets.shape[0]
    cdef Py_ssize_t m, l, i
    out = np.zeros((B, L, b), dtype=np.complex128)
    cdef double complex[:, :, ::1] o = out
    for m in range(B):
        for l in range(L):
            for i in range(n):
                o[m, l, buckets[m, i]] += signs[m, i] * vals[l, i]
    return out


def sym_dense_sketch(const double[:, :, ::1] T, const int64_t[::1] h,
                     const double complex[::1] sigma, int64_t b):
    cdef Py_ssize_t n = T.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double mult, t
    cdef double complex sij
    cdef int64_t hij
    out = np.zeros(b, dtype=np.complex128)
    cdef double complex[::1] o = out
    for i in range(n):
        for j in range(i, n):
            sij = sigma[i] * sigma[j]
            hij = h[i] + h[j]
            for k in range(j, n):
                t = T[i, j, k]
                if t == 0.0:
                    continue
                if i == j and j == k:
                    mult = 1.0
                elif i == j or j == k:
                    mult = 3.0
                else:
                    mult = 6.0
                o[(hij + h[k]) % b] += (mult * t) * (sij * sigma[k])
    return out


def asym_dense_sketch(const double[:, :, ::1] T, const int64_t[::1] h1, const int64_t[::1] h2,
                      const int64_t[::1] h3, const double[::1] s1, const double[::1] s2,
                      const double[::1] s3, int64_t b):
    cdef Py_ssize_t n = T.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double sij
    cdef int64_t hij
    out = np.zeros(b, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        for j in range(n):
            sij = s1[i] * s2[j]
            hij = h1[i] + h2[j]
            for k in range(n):
                o[(hij + h3[k]) % b] += sij * s3[k] * T[i, j, k]
    return out.astype(np.complex128)


# Fused frequency-domain combinations used by the contraction estimators.
# S is (B, b), F is (s, B, L, b); all arrays C-contiguous complex128.

def spectrum_sym_ivv(const double complex[:, ::1] S, double complex[:, :, :, ::1] F):
    """In place: F[0] <- S conj(F[0]); F[1] <- S (conj(F[0])**2 + conj(F[1])) / 6."""
    cdef Py_ssize_t B = F.shape[1], L = F.shape[2], b = F.shape[3]
    cdef Py_ssize_t m, l, f
    cdef double complex s, cu, c2
    for m in range(B):
        for l in range(L):
            for f in range(b):
                s = S[m, f]
                cu = F[0, m, l, f].conjugate()
                c2 = F[1, m, l, f].conjugate()
                F[0, m, l, f] = s * cu
                F[1, m, l, f] = s * (cu * cu + c2) * (1.0 / 6.0)


def spectrum_sym_vvv(const double complex[:, ::1] S, const double complex[:, :, :, ::1] F):
    """out[m, l] = sum_f Re(S[m, f] conj(Fu**3 / 6 + F2 Fu / 2))."""
    cdef Py_ssize_t B = F.shape[1], L = F.shape[2], b = F.shape[3]
    cdef Py_ssize_t m, l, f
    cdef double complex u, z
    cdef double acc
    out = np.empty((B, L), dtype=np.float64)
    cdef double[:, ::1] o = out
    for m in range(B):
        for l in range(L):
            acc = 0.0
            for f in range(b):
                u = F[0, m, l, f]
                z = u * (u * u * (1.0 / 6.0) + 0.5 * F[1, m, l, f])
                acc += S[m, f].real * z.real + S[m, f].imag * z.imag
            o[m, l] = acc
    return out


def spectrum_corr2(const double complex[:, ::1] S, double complex[:, :, :, ::1] F):
    """In place: F[0] <- S conj(F[0]) conj(F[1])."""
    cdef Py_ssize_t B = F.shape[1], L = F.shape[2], b = F.shape[3]
    cdef Py_ssize_t m, l, f
    cdef double ar, ai, br, bi, pr, pi
    for m in range(B):
        for l in range(L):
            for f in range(b):
                # explicit arithmetic avoids the C99 complex multiply call
                ar, ai = F[0, m, l, f].real, F[0, m, l, f].imag
                br, bi = F[1, m, l, f].real, F[1, m, l, f].imag
                pr, pi = ar * br - ai * bi, -(ar * bi + ai * br)
                F[0, m, l, f] = (S[m, f].real * pr - S[m, f].imag * pi) + 1j * (S[m, f].real * pi + S[m, f].imag * pr)


def spectrum_inner3(const double complex[:, ::1] S, const double complex[:, :, :, ::1] F):
    """out[m, l] = sum_f Re(S[m, f] conj(F[0] F[1] F[2]))."""
    cdef Py_ssize_t B = F.shape[1], L = F.shape[2], b = F.shape[3]
    cdef Py_ssize_t m, l, f
    cdef double complex z
    cdef double acc
    out = np.empty((B, L), dtype=np.float64)
    cdef double[:, ::1] o = out
    for m in range(B):
        for l in range(L):
            acc = 0.0
            for f in range(b):
                z = F[0, m, l, f] * F[1, m, l, f] * F[2, m, l, f]
                acc += S[m, f].real * z.real + S[m, f].imag * z.imag
            o[m, l] = acc
    return out
