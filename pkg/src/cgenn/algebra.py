"""Clifford algebra Cl(p, q, r) over the reals in a fixed orthogonal basis.

Basis blades are addressed by bitmask: bit ``i`` set means the factor
``e_{i+1}`` is present, and factors are kept in increasing index order.
The first ``p`` generators square to +1, the next ``q`` to -1 and the last
``r`` (the radical) to 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from math import comb
from typing import Iterable, Sequence

import numpy as np

MAX_DIM = 12
# Dense sign tables are built up to this dimension (4**8 entries); above it
# signs are computed row by row when needed.
TABLE_DIM = 8
# Full 3-tensor Cayley table (8**n entries) used for the matmul product path.
CAYLEY_DIM = 6

DEFAULT_ATOL = 1e-9


class SignatureMismatch(ValueError):
    pass


@dataclass(frozen=True)
class MetricSignature:
    p: int
    q: int = 0
    r: int = 0

    def __post_init__(self):
        if min(self.p, self.q, self.r) < 0:
            raise ValueError(f"negative count in signature {self.triple}")
        if self.n > MAX_DIM:
            raise ValueError(f"n = {self.n} exceeds the supported maximum {MAX_DIM}")

    @classmethod
    def parse(cls, text: str) -> "MetricSignature":
        parts = [s.strip() for s in text.split(",")]
        if len(parts) != 3:
            raise ValueError(f"signature must be 'p,q,r', got {text!r}")
        try:
            p, q, r = (int(s) for s in parts)
        except ValueError:
            raise ValueError(f"signature must be three integers, got {text!r}") from None
        return cls(p, q, r)

    @property
    def n(self) -> int:
        return self.p + self.q + self.r

    @property
    def dim(self) -> int:
        return 1 << self.n

    @property
    def triple(self) -> tuple[int, int, int]:
        return (self.p, self.q, self.r)

    @property
    def nondegenerate_dim(self) -> int:
        return self.p + self.q

    @property
    def radical_indices(self) -> range:
        """Zero-based indices of the radical generators (always stored last)."""
        return range(self.p + self.q, self.n)

    @property
    def metric(self) -> np.ndarray:
        """q(e_i) for each basis vector, as a float array of length n."""
        return np.array([1.0] * self.p + [-1.0] * self.q + [0.0] * self.r)

    def __str__(self) -> str:
        return f"{self.p},{self.q},{self.r}"


@dataclass(frozen=True)
class Blade:
    mask: int

    @property
    def grade(self) -> int:
        return self.mask.bit_count()

    @property
    def indices(self) -> tuple[int, ...]:
        """One-based generator indices in increasing order."""
        return tuple(i + 1 for i in range(self.mask.bit_length()) if self.mask >> i & 1)

    @classmethod
    def from_indices(cls, indices: Iterable[int]) -> "Blade":
        mask = 0
        for i in indices:
            mask |= 1 << (i - 1)
        return cls(mask)


def blade_name(mask: int, n: int) -> str:
    if mask == 0:
        return "1"
    idx = [str(i + 1) for i in range(n) if mask >> i & 1]
    return "e" + ("".join(idx) if n < 10 else "_".join(idx))


def reorder_sign(a: int, b: int) -> int:
    """(-1)**(number of transpositions needed to sort e_a e_b)."""
    swaps = 0
    a >>= 1
    while a:
        swaps += (a & b).bit_count()
        a >>= 1
    return -1 if swaps & 1 else 1


def blade_product(a: Blade, b: Blade, sig: MetricSignature) -> tuple[float, Blade]:
    """e_A e_B = sign * e_{A xor B}; sign is 0 if a radical generator repeats."""
    sign = float(reorder_sign(a.mask, b.mask))
    common = a.mask & b.mask
    metric = sig.metric
    for i in range(sig.n):
        if common >> i & 1:
            sign *= metric[i]
    return sign, Blade(a.mask ^ b.mask)


def _popcount(arr: np.ndarray) -> np.ndarray:
    arr = arr.astype(np.int64)
    count = np.zeros_like(arr)
    while np.any(arr):
        count += arr & 1
        arr = arr >> 1
    return count


def _sign_rows(rows: np.ndarray, cols: np.ndarray, metric_sign: np.ndarray) -> np.ndarray:
    """Vectorised blade product sign for broadcast arrays of masks."""
    swaps = np.zeros(np.broadcast_shapes(rows.shape, cols.shape), dtype=np.int64)
    a = rows >> 1
    while np.any(a):
        swaps = swaps + _popcount(a & cols)
        a = a >> 1
    return np.where(swaps & 1, -1.0, 1.0) * metric_sign[rows & cols]


class Algebra:
    """Precomputed tables for one signature. Obtain via :func:`algebra_for`."""

    def __init__(self, sig: MetricSignature):
        self.sig = sig
        self.n = sig.n
        self.dim = sig.dim
        idx = np.arange(self.dim)
        self.grades = _popcount(idx)
        metric = sig.metric
        # product of q(e_i) over the factors of each blade
        msign = np.ones(self.dim)
        for i in range(self.n):
            msign[(idx >> i) & 1 == 1] *= metric[i]
        self.metric_sign = msign
        g = self.grades
        self.alpha_sign = np.where(g % 2 == 1, -1.0, 1.0)
        self.beta_sign = np.where((g * (g - 1) // 2) % 2 == 1, -1.0, 1.0)
        self.gamma_sign = np.where((g * (g + 1) // 2) % 2 == 1, -1.0, 1.0)
        self.grade_onehot = (g[:, None] == np.arange(self.n + 1)[None, :]).astype(float)
        radical_mask = 0
        for i in sig.radical_indices:
            radical_mask |= 1 << i
        self.radical_mask = radical_mask

    @cached_property
    def xor(self) -> np.ndarray:
        idx = np.arange(self.dim)
        return idx[:, None] ^ idx[None, :]

    @cached_property
    def sign_table(self) -> np.ndarray:
        """sign_table[a, b]: sign of e_a e_b (result blade is a ^ b)."""
        idx = np.arange(self.dim)
        return _sign_rows(idx[:, None], idx[None, :], self.metric_sign)

    @cached_property
    def xor_sign(self) -> np.ndarray:
        """xor_sign[i, k] = sign(e_i e_{i^k}), i.e. the sign of the term landing on k."""
        return np.take_along_axis(self.sign_table, self.xor, axis=1)

    @cached_property
    def cayley(self) -> np.ndarray:
        """Dense tensor C[a, b, c] with e_a e_b = sum_c C[a, b, c] e_c."""
        d = self.dim
        c = np.zeros((d, d, d))
        a, b = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
        c[a, b, a ^ b] = self.sign_table
        return c

    def sign_row(self, a: int) -> np.ndarray:
        if self.n <= TABLE_DIM:
            return self.sign_table[a]
        return _sign_rows(np.array(a), np.arange(self.dim), self.metric_sign)

    def gp(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Geometric product of coefficient arrays broadcast over leading axes."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d = self.dim
        if self.n <= CAYLEY_DIM:
            shape = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
            xb = np.broadcast_to(x, shape + (d,))
            yb = np.broadcast_to(y, shape + (d,))
            outer = (xb[..., :, None] * yb[..., None, :]).reshape(shape + (d * d,))
            return outer @ self.cayley.reshape(d * d, d)
        if self.n <= TABLE_DIM:
            return np.einsum("...i,ik,...ik->...k", x, self.xor_sign, y[..., self.xor])
        shape = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        out = np.zeros(shape + (d,))
        idx = np.arange(d)
        for a in np.flatnonzero(np.any(np.reshape(x, (-1, d)) != 0, axis=0)):
            out[..., a ^ idx] += x[..., a, None] * self.sign_row(int(a)) * y
        return out

    def grade_mask(self, m: int) -> np.ndarray:
        return self.grades == m

    def grade_indices(self, m: int) -> np.ndarray:
        return np.flatnonzero(self.grades == m)

    def left_matrix(self, x: np.ndarray) -> np.ndarray:
        """Matrix L with L @ y == x * y."""
        return self.gp(x[None, :], np.eye(self.dim)).T

    def right_matrix(self, x: np.ndarray) -> np.ndarray:
        """Matrix R with R @ y == y * x."""
        return self.gp(np.eye(self.dim), x[None, :]).T

    @cached_property
    def product_mask(self) -> np.ndarray:
        """mask[i, j, k]: some nonzero blade product of grades (i, j) has grade k."""
        n1 = self.n + 1
        mask = np.zeros((n1, n1, n1), dtype=bool)
        s = self.sign_table
        g = self.grades
        a, b = np.nonzero(s)
        mask[g[a], g[b], g[a ^ b]] = True
        return mask


@lru_cache(maxsize=None)
def algebra_for(sig: MetricSignature) -> Algebra:
    return Algebra(sig)


class Multivector:
    """Immutable element of Cl(p, q, r) stored as 2**n dense coefficients."""

    __slots__ = ("signature", "coeffs")
    # make numpy scalars defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, signature: MetricSignature, coeffs: Sequence[float] | np.ndarray):
        arr = np.array(coeffs, dtype=float)
        if arr.shape != (signature.dim,):
            raise ValueError(f"expected {signature.dim} coefficients, got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "signature", signature)
        object.__setattr__(self, "coeffs", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Multivector is immutable")

    @classmethod
    def zeros(cls, sig: MetricSignature) -> "Multivector":
        return cls(sig, np.zeros(sig.dim))

    @classmethod
    def scalar(cls, sig: MetricSignature, value: float = 1.0) -> "Multivector":
        c = np.zeros(sig.dim)
        c[0] = value
        return cls(sig, c)

    @classmethod
    def blade(cls, sig: MetricSignature, blade: Blade | int | Iterable[int], value: float = 1.0):
        if isinstance(blade, Blade):
            mask = blade.mask
        elif isinstance(blade, int):
            mask = blade
        else:
            mask = Blade.from_indices(blade).mask
        c = np.zeros(sig.dim)
        c[mask] = value
        return cls(sig, c)

    @classmethod
    def vector(cls, sig: MetricSignature, coords: Sequence[float]) -> "Multivector":
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (sig.n,):
            raise ValueError(f"expected {sig.n} vector coordinates, got {coords.shape}")
        c = np.zeros(sig.dim)
        c[1 << np.arange(sig.n)] = coords
        return cls(sig, c)

    @property
    def algebra(self) -> Algebra:
        return algebra_for(self.signature)

    def _check(self, other: "Multivector"):
        if other.signature != self.signature:
            raise SignatureMismatch(f"{self.signature} vs {other.signature}")

    def __add__(self, other):
        if isinstance(other, Multivector):
            self._check(other)
            return Multivector(self.signature, self.coeffs + other.coeffs)
        if np.isscalar(other):
            return self + Multivector.scalar(self.signature, other)
        return NotImplemented

    __radd__ = __add__

    def __neg__(self):
        return Multivector(self.signature, -self.coeffs)

    def __sub__(self, other):
        if isinstance(other, Multivector) or np.isscalar(other):
            return self + (-other)
        return NotImplemented

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Multivector):
            return geometric_product(self, other)
        if np.isscalar(other):
            return Multivector(self.signature, self.coeffs * other)
        return NotImplemented

    def __rmul__(self, other):
        if np.isscalar(other):
            return Multivector(self.signature, self.coeffs * other)
        return NotImplemented

    def __truediv__(self, other):
        if np.isscalar(other):
            return Multivector(self.signature, self.coeffs / other)
        return NotImplemented

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            return NotImplemented
        out = Multivector.scalar(self.signature)
        for _ in range(k):
            out = out * self
        return out

    def grade(self, m: int) -> "Multivector":
        return grade_projection(self, m)

    def even(self) -> "Multivector":
        return Multivector(self.signature, np.where(self.algebra.grades % 2 == 0, self.coeffs, 0.0))

    def odd(self) -> "Multivector":
        return Multivector(self.signature, np.where(self.algebra.grades % 2 == 1, self.coeffs, 0.0))

    def parity(self, tol: float = DEFAULT_ATOL) -> int | None:
        """0 for even, 1 for odd, None when both parts are present."""
        odd = np.abs(self.odd().coeffs).max(initial=0.0) > tol
        even = np.abs(self.even().coeffs).max(initial=0.0) > tol
        if odd and even:
            return None
        return 1 if odd else 0

    def alpha(self) -> "Multivector":
        return alpha(self)

    def beta(self) -> "Multivector":
        return beta(self)

    def gamma(self) -> "Multivector":
        return gamma_conj(self)

    @property
    def scalar_part(self) -> float:
        return float(self.coeffs[0])

    @property
    def vector_part(self) -> np.ndarray:
        return self.coeffs[1 << np.arange(self.signature.n)].copy()

    def allclose(self, other: "Multivector", atol: float = DEFAULT_ATOL) -> bool:
        self._check(other)
        return bool(np.allclose(self.coeffs, other.coeffs, rtol=0.0, atol=atol))

    def __eq__(self, other):
        if not isinstance(other, Multivector):
            return NotImplemented
        return self.signature == other.signature and np.array_equal(self.coeffs, other.coeffs)

    __hash__ = None

    def __repr__(self) -> str:
        n = self.signature.n
        terms = [
            f"{c:+.6g}" + ("" if m == 0 else blade_name(m, n))
            for m, c in enumerate(self.coeffs)
            if c != 0
        ]
        body = " ".join(terms) if terms else "0"
        return f"Multivector({self.signature}: {body})"


def geometric_product(x: Multivector, y: Multivector) -> Multivector:
    x._check(y)
    return Multivector(x.signature, x.algebra.gp(x.coeffs, y.coeffs))


def grade_projection(x: Multivector, m: int) -> Multivector:
    if m < 0 or m > x.signature.n:
        return Multivector.zeros(x.signature)
    return Multivector(x.signature, np.where(x.algebra.grades == m, x.coeffs, 0.0))


def alpha(x: Multivector) -> Multivector:
    return Multivector(x.signature, x.algebra.alpha_sign * x.coeffs)


def beta(x: Multivector) -> Multivector:
    return Multivector(x.signature, x.algebra.beta_sign * x.coeffs)


def gamma_conj(x: Multivector) -> Multivector:
    return Multivector(x.signature, x.algebra.gamma_sign * x.coeffs)


def zero_projection(x: Multivector) -> float:
    return float(x.coeffs[0])


def extended_bilinear(x: Multivector, y: Multivector) -> float:
    """zeta(beta(x) y), evaluated in closed form on the orthogonal blade basis."""
    x._check(y)
    return float(np.sum(x.coeffs * y.coeffs * x.algebra.metric_sign))


def extended_quadratic(x: Multivector) -> float:
    return extended_bilinear(x, x)


def blades_of_grade(sig: MetricSignature, m: int) -> list[int]:
    return [int(a) for a in algebra_for(sig).grade_indices(m)]


def grade_dim(sig: MetricSignature, m: int) -> int:
    return comb(sig.n, m) if 0 <= m <= sig.n else 0
