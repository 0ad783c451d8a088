"""Arithmetic over prime fields F_q.

Scalars are :class:`FieldElement` instances; vectors are numpy arrays of
canonical representatives.  Moduli below 2**31 use ``int64`` arrays so a
product of two residues never overflows; larger moduli (up to 63 bits) fall
back to Python integers held in ``object`` arrays.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Sequence

import gmpy2
import numpy as np

MAX_MODULUS_BITS = 63
_NATIVE_LIMIT = 1 << 31


class FieldError(ValueError):
    """Raised for invalid moduli, modulus mismatches and division by zero."""


@lru_cache(maxsize=256)
def check_modulus(q: int) -> int:
    q = int(q)
    if q < 2 or q.bit_length() > MAX_MODULUS_BITS:
        raise FieldError(f"modulus {q} outside supported range [2, 2**63)")
    if not gmpy2.is_prime(q):
        raise FieldError(f"{q} is not prime")
    return q


def field_dtype(q: int):
    """numpy dtype able to hold residues of q and multiply them exactly."""
    return np.int64 if q < _NATIVE_LIMIT else object


def to_field(values, q: int) -> np.ndarray:
    """Reduce an integer array-like into canonical residues mod q."""
    dt = field_dtype(q)
    if dt is object:
        arr = np.array([int(v) % q for v in np.ravel(np.asarray(values, dtype=object))], dtype=object)
        return arr.reshape(np.shape(values))
    return np.mod(np.asarray(values, dtype=np.int64), q)


@dataclass(frozen=True, slots=True)
class FieldElement:
    value: int
    modulus: int

    def __post_init__(self):
        q = check_modulus(self.modulus)
        object.__setattr__(self, "value", int(self.value) % q)

    def _coerce(self, other) -> "FieldElement":
        if isinstance(other, FieldElement):
            if other.modulus != self.modulus:
                raise FieldError(f"modulus mismatch: {self.modulus} vs {other.modulus}")
            return other
        return FieldElement(int(other), self.modulus)

    def __add__(self, other):
        return field_op(self, self._coerce(other), "add")

    __radd__ = __add__

    def __sub__(self, other):
        return field_op(self, self._coerce(other), "sub")

    def __rsub__(self, other):
        return field_op(self._coerce(other), self, "sub")

    def __mul__(self, other):
        return field_op(self, self._coerce(other), "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        return field_op(self, self._coerce(other), "inv-mul")

    def __neg__(self):
        return FieldElement(-self.value, self.modulus)

    def inverse(self) -> "FieldElement":
        return field_op(FieldElement(1, self.modulus), self, "inv-mul")

    def __int__(self):
        return self.value

    def __repr__(self):
        return f"F{self.modulus}({self.value})"


OpKind = Literal["add", "sub", "mul", "inv-mul"]


def field_op(a: FieldElement, b: FieldElement, kind: OpKind) -> FieldElement:
    """Apply ``kind`` to two elements of the same field."""
    if a.modulus != b.modulus:
        raise FieldError(f"modulus mismatch: {a.modulus} vs {b.modulus}")
    q = a.modulus
    if kind == "add":
        v = a.value + b.value
    elif kind == "sub":
        v = a.value - b.value
    elif kind == "mul":
        v = a.value * b.value
    elif kind == "inv-mul":
        if b.value == 0:
            raise FieldError("inversion of zero")
        v = a.value * pow(b.value, -1, q)
    else:
        raise ValueError(f"unknown field op {kind!r}")
    return FieldElement(v % q, q)


Variant = Literal["baseline", "diff", "mask"]


def field_bound(R: int, d: int, L: int = 1, variant: str = "baseline") -> int:
    """Largest integer the scheme needs to represent without wraparound."""
    if min(R, d, L) < 1:
        raise ValueError("R, d and L must be >= 1")
    bound = R * R * L * d
    return 2 * bound if variant == "diff" else bound


def min_field_size(R: int, d: int, L: int = 1, variant: str = "baseline") -> int:
    """Smallest prime strictly above the variant's bound (R^2 L d, doubled for diff)."""
    return int(gmpy2.next_prime(field_bound(R, d, L, variant)))


class VandermondeMatrix:
    """Vandermonde matrix with rows (1, a, a^2, ...) at distinct points of F_q.

    The inverse is computed once by Gauss-Jordan elimination so each solve is a
    single matrix-vector product.
    """

    def __init__(self, points: Sequence[int], q: int):
        self.q = check_modulus(q)
        pts = [int(p) % self.q for p in points]
        if len(set(pts)) != len(pts):
            raise FieldError(f"evaluation points must be distinct mod {q}: {list(points)}")
        self.points = tuple(pts)
        self.order = len(pts)
        self.entries = [[pow(a, j, self.q) for j in range(self.order)] for a in pts]
        self.inverse = _invert(self.entries, self.q)
        self._inv_arr = np.array(self.inverse, dtype=field_dtype(self.q))

    def __repr__(self):
        return f"VandermondeMatrix(points={self.points}, q={self.q})"

    def apply(self, coeffs) -> np.ndarray:
        """Evaluate m @ coeffs mod q (coeffs has leading axis of length order)."""
        c = to_field(coeffs, self.q)
        mat = np.array(self.entries, dtype=field_dtype(self.q))
        return _matmul_mod(mat, c, self.q)

    def solve(self, rhs) -> np.ndarray:
        """Return c with m @ c == rhs.  ``rhs`` may be (order,) or (order, k)."""
        r = to_field(rhs, self.q)
        if r.shape[0] != self.order:
            raise FieldError(f"rhs has {r.shape[0]} rows, matrix order is {self.order}")
        return _matmul_mod(self._inv_arr, r, self.q)


def vandermonde_solve(m: VandermondeMatrix, rhs) -> np.ndarray:
    return m.solve(rhs)


def _matmul_mod(mat: np.ndarray, vec: np.ndarray, q: int) -> np.ndarray:
    # accumulate row by row so int64 sums stay below 2**63
    n = mat.shape[0]
    out = None
    for j in range(n):
        term = np.multiply.outer(mat[:, j], vec[j]) % q
        out = term if out is None else (out + term) % q
    return out


def _invert(a: list[list[int]], q: int) -> list[list[int]]:
    n = len(a)
    aug = [list(row) + [int(i == j) for j in range(n)] for i, row in enumerate(a)]
    for col in range(n):
        piv = next((r for r in range(col, n) if aug[r][col] % q), None)
        if piv is None:
            raise FieldError("matrix is singular over F_q")
        aug[col], aug[piv] = aug[piv], aug[col]
        inv = pow(aug[col][col], -1, q)
        aug[col] = [v * inv % q for v in aug[col]]
        for r in range(n):
            if r != col and aug[r][col]:
                f = aug[r][col]
                aug[r] = [(v - f * p) % q for v, p in zip(aug[r], aug[col])]
    return [row[n:] for row in aug]


def _mulhi_lo(words: np.ndarray, bound: int) -> tuple[np.ndarray, np.ndarray]:
    """High and low 64-bit halves of words * bound, for bound < 2**32."""
    mask32 = np.uint64(0xFFFFFFFF)
    b = np.uint64(bound)
    hi = words >> np.uint64(32)
    lo = words & mask32
    lo_p = lo * b
    mid = hi * b + (lo_p >> np.uint64(32))
    return mid >> np.uint64(32), ((mid & mask32) << np.uint64(32)) | (lo_p & mask32)


def uniform_below(draw_words, n: int, bound: int) -> np.ndarray:
    """Draw ``n`` integers uniform on [0, bound) from a source of uint64 words.

    ``draw_words(k)`` returns ``k`` independent uniform uint64 values.  Each
    word w maps to floor(w * bound / 2**64); words whose low product half
    falls below 2**64 mod bound are rejected, which makes the result exactly
    uniform (Lemire's method).  The map is monotone in ``bound``, so two
    bounds read from the same word stream give coupled draws.
    """
    if bound < 1:
        raise ValueError("bound must be >= 1")
    threshold = ((1 << 64) - bound) % bound
    out: list[np.ndarray] = []
    have = 0
    while have < n:
        need = n - have
        words = np.asarray(draw_words(need + (need >> 6) + 1), dtype=np.uint64)
        if bound < (1 << 32):
            high, low = _mulhi_lo(words, bound)
            vals = high[low >= np.uint64(threshold)].astype(np.int64)
            if bound >= _NATIVE_LIMIT:
                vals = vals.astype(object)
        else:
            prods = [int(w) * bound for w in words]
            vals = [p >> 64 for p in prods if (p & ((1 << 64) - 1)) >= threshold]
            vals = np.array(vals, dtype=object if bound >= _NATIVE_LIMIT else np.int64)
        vals = vals[:need]
        out.append(vals)
        have += len(vals)
    if not out:
        return np.zeros(0, dtype=object if bound >= _NATIVE_LIMIT else np.int64)
    return np.concatenate(out)


def uniform_from_words(draw_words, n: int, q: int) -> np.ndarray:
    return uniform_below(draw_words, n, check_modulus(q))


def sample_uniform(count: int, q: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """i.i.d. uniform vector over F_q.  ``rng=None`` draws from the OS entropy pool."""
    if count < 0:
        raise ValueError("count must be non-negative")
    if rng is None:

        def draw(k):
            return np.frombuffer(os.urandom(8 * k), dtype="<u8")
    else:

        def draw(k):
            return rng.integers(0, 1 << 64, size=k, dtype=np.uint64, endpoint=False)

    return uniform_from_words(draw, count, q)
