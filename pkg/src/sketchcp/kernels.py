"""Backend selection for the hot loops.

The compiled ``_kernels`` extension is used when it was built; otherwise the
numpy implementations in ``_kernels_py`` are used. Setting the environment
variable ``SKETCHCP_PURE_PYTHON=1`` forces the fallback.
"""
import os

import numpy as np

from sketchcp import _kernels_py

try:
    if os.environ.get("SKETCHCP_PURE_PYTHON"):
        raise ImportError("pure python backend requested")
    from sketchcp import _kernels as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

BACKEND = "cython" if _compiled is not None else "python"
_impl = BACKENDS[BACKEND]


def use_backend(name):
    """Switch the active backend ("cython" or "python"); returns the previous name."""
    global BACKEND, _impl
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}")
    previous = BACKEND
    BACKEND, _impl = name, BACKENDS[name]
    return previous


def poly_hash_eval(coeffs, x, p, b):
    x = np.ascontiguousarray(x, dtype=np.int64)
    shape = x.shape
    out = _impl.poly_hash_eval(np.ascontiguousarray(coeffs, dtype=np.uint64), x.ravel(), p, b)
    return np.asarray(out).reshape(shape)


def sketch_columns(vals, buckets, signs, b):
    """Count-sketch L real vectors under B (bucket, sign) tables at once.

    Parameters
    ----------
    vals : (L, n) float array
    buckets : (B, n) int array of bucket indices in [0, b)
    signs : (B, n) complex array
    b : int

    Returns
    -------
    (B, L, b) complex array
    """
    return _impl.sketch_columns(
        np.ascontiguousarray(vals, dtype=np.float64),
        np.ascontiguousarray(buckets, dtype=np.int64),
        np.ascontiguousarray(signs, dtype=np.complex128),
        int(b),
    )


def sym_dense_sketch(T, h, sigma, b):
    return np.asarray(_impl.sym_dense_sketch(
        np.ascontiguousarray(T, dtype=np.float64),
        np.ascontiguousarray(h, dtype=np.int64),
        np.ascontiguousarray(sigma, dtype=np.complex128),
        int(b),
    ))


def asym_dense_sketch(T, h1, h2, h3, s1, s2, s3, b):
    as_i = lambda a: np.ascontiguousarray(a, dtype=np.int64)  # noqa: E731
    as_f = lambda a: np.ascontiguousarray(a, dtype=np.float64)  # noqa: E731
    return np.asarray(_impl.asym_dense_sketch(
        as_f(T), as_i(h1), as_i(h2), as_i(h3), as_f(s1), as_f(s2), as_f(s3), int(b)
    ))


# Fused spectrum kernels. S is (B, b) and F is (s, B, L, b), complex128.
# The in-place variants overwrite F and return it.


def _c(a):
    return np.ascontiguousarray(a, dtype=np.complex128)


def spectrum_sym_ivv(S, F):
    """F[0] <- S conj(F[0]) and F[1] <- S (conj(F[0])**2 + conj(F[1])) / 6, in place."""
    F = _c(F)
    _impl.spectrum_sym_ivv(_c(S), F)
    return F


def spectrum_sym_vvv(S, F):
    """sum_f Re(S conj(F[0]**3 / 6 + F[1] F[0] / 2)), shape (B, L)."""
    return np.asarray(_impl.spectrum_sym_vvv(_c(S), _c(F)))


def spectrum_corr2(S, F):
    """F[0] <- S conj(F[0] F[1]), in place."""
    F = _c(F)
    _impl.spectrum_corr2(_c(S), F)
    return F


def spectrum_inner3(S, F):
    """sum_f Re(S conj(F[0] F[1] F[2])), shape (B, L)."""
    return np.asarray(_impl.spectrum_inner3(_c(S), _c(F)))
