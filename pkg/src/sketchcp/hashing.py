"""k-wise independent polynomial hashing and random sign generators.

Hashes are polynomials of degree ``independence - 1`` over the Mersenne
prime field GF(2**31 - 1), reduced into ``b`` buckets with a second modulus.
The bias introduced by the second reduction is at most ``b / p``.

Sub-seeds are derived from one 64-bit master seed with
:func:`derive_seed`, which feeds ``(master, *path)`` to numpy's
``SeedSequence`` as entropy and spawn key. Stream tags used across the
package are listed below so that one master seed reproduces a whole run.
"""
from dataclasses import dataclass

import numpy as np

from sketchcp import kernels

MERSENNE_P = (1 << 31) - 1

# top-level stream tags for derive_seed(master, tag, ...)
STREAM_SKETCH = 1
STREAM_INIT = 2
STREAM_PLANT = 3
STREAM_CORPUS = 4


def derive_seed(master, *path):
    """Deterministically derive a 64-bit seed from ``master`` and an integer path."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class PolyHash:
    """h(i) = ((sum_d coeffs[d] * i**d) mod p) mod b."""

    coeffs: tuple
    b: int
    prime: int = MERSENNE_P

    @property
    def independence(self):
        return len(self.coeffs)

    @property
    def degree(self):
        return len(self.coeffs) - 1

    def __call__(self, i):
        return eval_hash(self, i)


def new_poly_hash(independence, b, seed):
    if not 2 <= independence <= 8:
        raise ValueError(f"independence must be in 2..8, got {independence}")
    if b < 2:
        raise ValueError(f"need at least 2 buckets, got b={b}")
    rng = np.random.default_rng(int(seed))
    coeffs = rng.integers(0, MERSENNE_P, size=independence, dtype=np.int64)
    return PolyHash(tuple(int(c) for c in coeffs), int(b))


def eval_hash(h, i):
    """Evaluate ``h`` at a 0-based index or an integer array of indices."""
    if np.isscalar(i):
        acc = 0
        for c in reversed(h.coeffs):
            acc = (acc * int(i) + c) % h.prime
        return acc % h.b
    return kernels.poly_hash_eval(h.coeffs, i, h.prime, h.b)


# the spec-facing name
eval = eval_hash  # noqa: A001


@dataclass(frozen=True)
class SignGenerator:
    """Random unit signs: +-1 ("rademacher") or powers of i ("complex4")."""

    mode: str
    backing: PolyHash

    def __post_init__(self):
        want = {"rademacher": 2, "complex4": 4}.get(self.mode)
        if want is None:
            raise ValueError(f"unknown sign mode {self.mode!r}")
        if self.backing.b != want:
            raise ValueError(f"{self.mode} signs need a backing hash into {want} buckets")

    def __call__(self, i):
        return sign_eval(self, i)


def new_sign_generator(mode, seed, independence=6):
    m = 2 if mode == "rademacher" else 4
    return SignGenerator(mode, new_poly_hash(independence, m, seed))


_RADEMACHER = np.array([1.0, -1.0])
_FOURTH_ROOTS = np.array([1.0 + 0j, 1j, -1.0 + 0j, -1j])


def sign_eval(s, i):
    """omega ** backing(i) with omega = -1 or omega = i; exact unit modulus."""
    g = eval_hash(s.backing, i)
    table = _RADEMACHER if s.mode == "rademacher" else _FOURTH_ROOTS
    out = table[g]
    return out.item() if np.isscalar(i) else out


def symmetric_bucket(h, i, j, k):
    """Permutation-invariant bucket (h(i) + h(j) + h(k)) mod b."""
    return (eval_hash(h, i) + eval_hash(h, j) + eval_hash(h, k)) % h.b
