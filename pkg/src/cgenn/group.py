"""Clifford group elements, the adjusted twisted conjugation and the lift
from radical-preserving orthogonal matrices back to versors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence, Union

import numpy as np

from .algebra import (
    MetricSignature,
    Multivector,
    SignatureMismatch,
    algebra_for,
    extended_quadratic,
)

# |q(v)| must exceed this after scaling v to unit sup-norm when sampling.
NULL_REJECTION = 0.1
MAX_SAMPLING_DRAWS = 1000
INVERSE_COND_LIMIT = 1e12


class NotInvertible(ArithmeticError):
    pass


class NullVectorSampling(RuntimeError):
    pass


class NotRadicalPreserving(ValueError):
    pass


class DecompositionFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class ScalarGen:
    value: float


@dataclass(frozen=True)
class VectorGen:
    coords: tuple[float, ...]


@dataclass(frozen=True)
class GammaGen:
    """1 + e_i * sum_j c_j f_j with i a non-radical index (zero-based) and
    c_j the coefficients over the radical generators f_j."""

    index: int
    coeffs: tuple[float, ...]


Generator = Union[ScalarGen, VectorGen, GammaGen]


def _generator_mv(sig: MetricSignature, gen: Generator) -> Multivector:
    if isinstance(gen, ScalarGen):
        if gen.value == 0:
            raise ValueError("scalar generator must be nonzero")
        return Multivector.scalar(sig, gen.value)
    if isinstance(gen, VectorGen):
        v = Multivector.vector(sig, gen.coords)
        if extended_quadratic(v) == 0:
            raise ValueError("vector generator must be non-null")
        return v
    if isinstance(gen, GammaGen):
        if gen.index >= sig.nondegenerate_dim:
            raise ValueError("gamma generator index must be non-radical")
        if len(gen.coeffs) != sig.r:
            raise ValueError(f"gamma generator needs {sig.r} radical coefficients")
        f = np.zeros(sig.n)
        f[sig.p + sig.q:] = gen.coeffs
        e = Multivector.blade(sig, 1 << gen.index)
        return 1.0 + e * Multivector.vector(sig, f)
    raise TypeError(f"unknown generator {gen!r}")


def _generator_inverse(sig: MetricSignature, gen: Generator) -> Generator:
    if isinstance(gen, ScalarGen):
        return ScalarGen(1.0 / gen.value)
    if isinstance(gen, VectorGen):
        coords = np.asarray(gen.coords)
        qv = float(np.sum(sig.metric * coords**2))
        return VectorGen(tuple(coords / qv))
    # (e F)^2 = -q(e) F^2 = 0 for radical F, so the inverse flips the sign
    return GammaGen(gen.index, tuple(-c for c in gen.coeffs))


def _product(sig: MetricSignature, factors: Sequence[Multivector]) -> Multivector:
    out = Multivector.scalar(sig)
    for f in factors:
        out = out * f
    return out


@dataclass(frozen=True)
class Versor:
    """A Clifford group element c * v_1 ... v_k * gamma_1 ... gamma_m kept as its
    generator list together with the expanded product and its inverse."""

    signature: MetricSignature
    generators: tuple[Generator, ...]
    expanded: Multivector = field(compare=False)
    inverse: Multivector = field(compare=False, repr=False)

    @classmethod
    def from_generators(cls, sig: MetricSignature, generators: Sequence[Generator]) -> "Versor":
        generators = tuple(generators)
        expanded = _product(sig, [_generator_mv(sig, g) for g in generators])
        inv_gens = [_generator_inverse(sig, g) for g in reversed(generators)]
        inverse = _product(sig, [_generator_mv(sig, g) for g in inv_gens])
        scale = max(1.0, np.abs(expanded.coeffs).max() * np.abs(inverse.coeffs).max())
        one = Multivector.scalar(sig)
        for check in (expanded * inverse, inverse * expanded):
            if np.abs((check - one).coeffs).max() > 1e-9 * scale:
                raise NotInvertible("generator product failed its inverse check")
        return cls(sig, generators, expanded, inverse)

    @classmethod
    def identity(cls, sig: MetricSignature) -> "Versor":
        return cls.from_generators(sig, ())

    @property
    def parity(self) -> int:
        """eta(w) as 0 (even) or 1 (odd)."""
        return sum(isinstance(g, VectorGen) for g in self.generators) % 2

    @property
    def reflection_count(self) -> int:
        return sum(isinstance(g, VectorGen) for g in self.generators)

    def __mul__(self, other: "Versor") -> "Versor":
        if not isinstance(other, Versor):
            return NotImplemented
        if other.signature != self.signature:
            raise SignatureMismatch(f"{self.signature} vs {other.signature}")
        return Versor.from_generators(self.signature, self.generators + other.generators)

    def inv(self) -> "Versor":
        gens = [_generator_inverse(self.signature, g) for g in reversed(self.generators)]
        return Versor.from_generators(self.signature, gens)


def general_inverse(x: Multivector) -> Multivector:
    """Two-sided inverse of an arbitrary multivector via its left-multiplication matrix."""
    alg = x.algebra
    left = alg.left_matrix(x.coeffs)
    cond = np.linalg.cond(left)
    if not np.isfinite(cond) or cond > INVERSE_COND_LIMIT:
        raise NotInvertible(f"left multiplication matrix is singular (cond={cond:.3g})")
    unit = np.zeros(alg.dim)
    unit[0] = 1.0
    y = Multivector(x.signature, np.linalg.solve(left, unit))
    one = Multivector.scalar(x.signature)
    scale = max(1.0, np.abs(x.coeffs).max() * np.abs(y.coeffs).max())
    for check in (x * y, y * x):
        if np.abs((check - one).coeffs).max() > 1e-8 * scale:
            raise NotInvertible("solution is only a one-sided inverse")
    return y


def _as_element(w: Versor | Multivector) -> tuple[Multivector, Multivector]:
    if isinstance(w, Versor):
        return w.expanded, w.inverse
    return w, general_inverse(w)


def rho_coeffs(w: Versor | Multivector, x: np.ndarray) -> np.ndarray:
    """Twisted conjugation applied to raw coefficient arrays of shape (..., 2**n)."""
    elem, inv = _as_element(w)
    alg = elem.algebra
    even = alg.grades % 2 == 0
    x = np.asarray(x, dtype=float)
    x_even = np.where(even, x, 0.0)
    x_odd = np.where(even, 0.0, x)
    w_alpha = alg.alpha_sign * elem.coeffs
    # w x^[0] w^-1 + alpha(w) x^[1] w^-1
    left = alg.gp(elem.coeffs, x_even) + alg.gp(w_alpha, x_odd)
    return alg.gp(left, inv.coeffs)


def twisted_conjugation(w: Versor | Multivector, x: Multivector) -> Multivector:
    sig = w.signature
    if x.signature != sig:
        raise SignatureMismatch(f"{sig} vs {x.signature}")
    return Multivector(sig, rho_coeffs(w, x.coeffs))


def rho_full_matrix(w: Versor | Multivector) -> np.ndarray:
    """The 2**n x 2**n matrix of rho(w); column A is rho(w)(e_A)."""
    d = w.signature.dim
    return rho_coeffs(w, np.eye(d)).T


def rho_matrix(w: Versor | Multivector, m: int) -> np.ndarray:
    """rho(w) restricted to grade m, in the basis of grade-m blades (increasing mask)."""
    alg = algebra_for(w.signature)
    idx = alg.grade_indices(m)
    images = rho_coeffs(w, np.eye(alg.dim)[idx])
    return images[:, idx].T


def sample_versor(
    sig: MetricSignature,
    k: int,
    include_gamma: bool = False,
    include_scalar: bool = False,
    rng: np.random.Generator | None = None,
) -> Versor:
    if k < 0:
        raise ValueError("reflection count must be non-negative")
    rng = np.random.default_rng() if rng is None else rng
    metric = sig.metric
    gens: list[Generator] = []
    if include_scalar:
        gens.append(ScalarGen(float(rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 2.0))))
    for _ in range(k):
        for _draw in range(MAX_SAMPLING_DRAWS):
            v = rng.normal(size=sig.n)
            v /= np.abs(v).max()
            if abs(np.sum(metric * v**2)) > NULL_REJECTION:
                break
        else:
            raise NullVectorSampling(f"no non-null vector found in {MAX_SAMPLING_DRAWS} draws for {sig}")
        gens.append(VectorGen(tuple(v)))
    if include_gamma and sig.r > 0:
        for i in range(sig.nondegenerate_dim):
            gens.append(GammaGen(i, tuple(rng.uniform(-1.0, 1.0, size=sig.r))))
    return Versor.from_generators(sig, gens)


def sample_radical_unit(sig: MetricSignature, rng: np.random.Generator) -> Multivector:
    """1 + h with h a random combination of even products of radical generators."""
    alg = algebra_for(sig)
    coeffs = np.zeros(sig.dim)
    coeffs[0] = 1.0
    for a in range(1, sig.dim):
        if a & ~alg.radical_mask == 0 and alg.grades[a] % 2 == 0:
            coeffs[a] = rng.uniform(-1.0, 1.0)
    return Multivector(sig, coeffs)


class Membership(NamedTuple):
    member: bool
    reason: str


def is_clifford_group_member(x: Multivector, tol: float = 1e-9) -> Membership:
    if x.parity(tol) is None:
        return Membership(False, "mixed_parity")
    try:
        general_inverse(x)
    except NotInvertible:
        return Membership(False, "not_invertible")
    alg = x.algebra
    basis = np.eye(alg.dim)[1 << np.arange(x.signature.n)]
    images = rho_coeffs(x, basis)
    off = np.abs(images[:, alg.grades != 1]).max(initial=0.0)
    scale = max(1.0, np.abs(images).max(initial=0.0))
    if off > tol * scale:
        return Membership(False, "vectors_not_preserved")
    return Membership(True, "ok")


def spinor_norm(x: Multivector) -> Multivector:
    return x.beta() * x


def clifford_norm(x: Multivector) -> Multivector:
    return x.gamma() * x


def qbar_group_hom(w: Versor | Multivector) -> float:
    elem = w.expanded if isinstance(w, Versor) else w
    return extended_quadratic(elem)


def pin_member(w: Versor, tol: float = 1e-9) -> bool:
    # qbar ignores the trivially acting radical factors: qbar(1 + h) = 1
    return abs(abs(qbar_group_hom(w)) - 1.0) <= tol


def spin_member(w: Versor, tol: float = 1e-9) -> bool:
    return pin_member(w, tol) and w.parity == 0


def same_action(w1: Versor, w2: Versor, tol: float = 1e-8) -> bool:
    """Compare elements modulo the kernel of rho by their induced maps on V."""
    return bool(np.allclose(rho_matrix(w1, 1), rho_matrix(w2, 1), rtol=0.0, atol=tol))


@dataclass(frozen=True)
class OrthogonalMap:
    """Linear map on grade-1 coordinates; column i is the image of e_{i+1}."""

    signature: MetricSignature
    matrix: np.ndarray

    def __post_init__(self):
        n = self.signature.n
        mat = np.array(self.matrix, dtype=float)
        if mat.shape != (n, n):
            raise ValueError(f"expected a {n}x{n} matrix, got {mat.shape}")
        mat.flags.writeable = False
        object.__setattr__(self, "matrix", mat)

    def orthogonality_residual(self) -> float:
        delta = np.diag(self.signature.metric)
        return float(np.abs(self.matrix.T @ delta @ self.matrix - delta).max(initial=0.0))

    def radical_residual(self) -> float:
        m = self.signature.nondegenerate_dim
        r = self.signature.r
        if r == 0:
            return 0.0
        top_right = self.matrix[:m, m:]
        bottom_right = self.matrix[m:, m:]
        return float(max(np.abs(top_right).max(initial=0.0), np.abs(bottom_right - np.eye(r)).max()))

    def is_orthogonal(self, tol: float = 1e-9) -> bool:
        return self.orthogonality_residual() <= tol

    def is_radical_preserving(self, tol: float = 1e-9) -> bool:
        return self.is_orthogonal(tol) and self.radical_residual() <= tol


def extract_orthogonal(w: Versor) -> OrthogonalMap:
    return OrthogonalMap(w.signature, rho_matrix(w, 1))


def _reflection_matrix(u: np.ndarray, metric: np.ndarray) -> np.ndarray:
    # x -> x - 2 b(u, x) / q(u) * u
    qu = np.sum(metric * u**2)
    return np.eye(len(u)) - 2.0 * np.outer(u, metric * u) / qu


def lift_orthogonal(
    phi: OrthogonalMap,
    tol: float = 1e-7,
    null_threshold: float = 1e-8,
) -> Versor:
    """Find a versor w with rho(w)|_V equal to ``phi``.

    The non-degenerate block is reduced column by column with reflections
    (falling back to two reflections when the direct difference vector is
    nearly null); the radical-mixing block becomes gamma generators.
    """
    sig = phi.signature
    if not phi.is_radical_preserving(max(tol, 1e-9) * max(1.0, np.abs(phi.matrix).max() ** 2)):
        raise NotRadicalPreserving("map is not orthogonal with identity on the radical")
    m = sig.nondegenerate_dim
    metric = sig.metric[:m]
    cur = phi.matrix[:m, :m].copy()
    # round-off in cur grows with the square of the entries (boosts in
    # indefinite signatures can be large)
    skip = 1e-10 * max(1.0, np.abs(cur).max(initial=0.0)) ** 2
    normals: list[np.ndarray] = []
    for j in range(m):
        c = cur[:, j]
        d = np.zeros(m)
        d[j] = 1.0
        diff = c - d
        # columns already in place up to round-off must not produce a reflection
        # along the (direction-less) residual
        if np.abs(diff).max() < skip:
            continue
        q_minus = np.sum(metric * diff**2)
        sum_ = c + d
        q_plus = np.sum(metric * sum_**2)
        kappa_minus = np.inf if q_minus == 0 else np.sum(diff**2) / abs(q_minus)
        kappa_plus = np.inf if q_plus == 0 else np.sum(sum_**2) / abs(q_plus)
        if kappa_minus * null_threshold < 1.0 and kappa_minus <= 100.0 * kappa_plus:
            steps = [diff]
        else:
            steps = [sum_, d]
        for u in steps:
            cur = _reflection_matrix(u, metric) @ cur
            normals.append(u)
        if len(normals) > 2 * m:
            raise DecompositionFailed("reflection count exceeded its bound")
    gens: list[Generator] = []
    for u in normals:
        v = np.zeros(sig.n)
        v[:m] = u
        gens.append(VectorGen(tuple(v)))
    mix = phi.matrix[m:, :m]
    for i in range(m):
        if np.any(mix[:, i] != 0):
            gens.append(GammaGen(i, tuple(-mix[:, i] / (2.0 * metric[i]))))
    w = Versor.from_generators(sig, gens)
    scale = max(1.0, np.abs(phi.matrix).max())
    err = np.abs(rho_matrix(w, 1) - phi.matrix).max(initial=0.0)
    if err > tol * scale:
        raise DecompositionFailed(f"lifted versor misses the target map by {err:.3g}")
    return w


def random_radical_preserving_map(
    sig: MetricSignature, rng: np.random.Generator, scale: float = 0.5
) -> OrthogonalMap:
    """Random element of O_R(p, q, r), built without versors: exp of an element
    of so(p, q), random sign flips, and a random radical-mixing block."""
    from scipy.linalg import expm

    m = sig.nondegenerate_dim
    eta = sig.metric[:m]
    mat = np.eye(sig.n)
    if m:
        k = rng.normal(scale=scale, size=(m, m))
        k = k - k.T
        o = expm(eta[:, None] * k)
        flips = np.diag(rng.choice([-1.0, 1.0], size=m))
        mat[:m, :m] = o @ flips
    if sig.r:
        mat[m:, :m] = rng.normal(size=(sig.r, m))
    return OrthogonalMap(sig, mat)
