"""Executable checks of the structural results about Cl(p, q, r) and its
Clifford group, each reported with its worst residual."""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .algebra import Algebra, MetricSignature, algebra_for
from .group import (
    GammaGen,
    VectorGen,
    Versor,
    extract_orthogonal,
    lift_orthogonal,
    random_radical_preserving_map,
    rho_coeffs,
    rho_full_matrix,
    rho_matrix,
    sample_radical_unit,
    sample_versor,
)
from .layers import Network

RANK_THRESHOLD = 1e-10
RHO_TOL = 1e-8
ROUNDTRIP_TOL = 1e-6
POLYNOMIAL_TOL = 1e-7
GRADING_TOL = 1e-9
DEGENERATE_TOL = 1e-10

SUITE_SIGNATURES = tuple(
    MetricSignature(*t) for t in [(3, 0, 0), (2, 0, 0), (1, 1, 0), (1, 3, 0), (5, 0, 0), (2, 0, 1), (1, 1, 1)]
)


@dataclass
class TheoremReport:
    theorem: str
    signature: str
    trials: int
    max_residual: float
    tolerance: float
    details: dict[str, float] = field(default_factory=dict)
    raw_max_residual: float | None = None

    @property
    def status(self) -> str:
        return "pass" if self.max_residual < self.tolerance else "fail"

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["status"] = self.status
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_line(self) -> str:
        return (
            f"{self.status.upper():4s} {self.theorem} sig={self.signature} trials={self.trials} "
            f"max_residual={self.max_residual:.3e} tol={self.tolerance:.0e}"
            + ("" if self.raw_max_residual is None else f" raw={self.raw_max_residual:.3e}")
        )


def residual(a, b) -> float:
    """Largest coefficient difference, relative once magnitudes exceed 1."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(1.0, float(np.abs(a).max(initial=0.0)), float(np.abs(b).max(initial=0.0)))
    return float(np.abs(a - b).max(initial=0.0)) / scale


def conditioning(*versors: Versor) -> float:
    """Product of max|w| * max|w^-1| over the versors, at least 1.  Round-off in
    rho(w)(x) grows with this factor; near-null reflections in indefinite
    signatures make it large."""
    out = 1.0
    for w in versors:
        out *= max(1.0, float(np.abs(w.expanded.coeffs).max() * np.abs(w.inverse.coeffs).max()))
    return out


class _Residuals:
    """Worst residual per property, both raw and divided by conditioning**2."""

    def __init__(self):
        self.scaled: dict[str, float] = {}
        self.raw: dict[str, float] = {}

    def add(self, name: str, value: float, cond: float = 1.0) -> None:
        self.raw[name] = max(self.raw.get(name, 0.0), value)
        self.scaled[name] = max(self.scaled.get(name, 0.0), value / cond**2)

    def report(self, theorem, sig, trials, tol) -> TheoremReport:
        worst = max(self.scaled.values(), default=0.0)
        raw = max(self.raw.values(), default=0.0)
        return TheoremReport(theorem, str(sig), trials, worst, tol, dict(self.scaled), raw)


def random_versor(sig: MetricSignature, rng: np.random.Generator, max_reflections: int | None = None) -> Versor:
    """A random Clifford group element mixing reflections, a scalar and, in
    degenerate signatures, gamma generators."""
    top = sig.nondegenerate_dim + 1 if max_reflections is None else max_reflections
    k = int(rng.integers(0, top + 1))
    return sample_versor(
        sig, k, include_gamma=bool(rng.integers(2)), include_scalar=bool(rng.integers(2)), rng=rng
    )


# grading is basis independent


def random_basis_change(sig: MetricSignature, rng: np.random.Generator) -> np.ndarray:
    """Columns are the coordinates of a new orthogonal basis with the same
    metric: an orthogonal block on V/R, any mixing into R and any invertible
    map of R itself."""
    c = random_radical_preserving_map(sig, rng).matrix.copy()
    m, r = sig.nondegenerate_dim, sig.r
    if r:
        n_block = rng.normal(size=(r, r))
        while abs(np.linalg.det(n_block)) < 0.1:
            n_block = rng.normal(size=(r, r))
        c[m:, m:] = n_block
    return c


def _basis_blade(alg: Algebra, c: np.ndarray, idx: tuple[int, ...]) -> np.ndarray:
    out = np.zeros(alg.dim)
    out[0] = 1.0
    for j in idx:
        vec = np.zeros(alg.dim)
        vec[1 << np.arange(alg.sig.n)] = c[:, j]
        out = alg.gp(out, vec)
    return out


def _minor_expansion(alg: Algebra, c: np.ndarray, idx: tuple[int, ...]) -> np.ndarray:
    out = np.zeros(alg.dim)
    n = alg.sig.n
    for rows in itertools.combinations(range(n), len(idx)):
        mask = sum(1 << i for i in rows)
        out[mask] = np.linalg.det(c[np.ix_(rows, idx)]) if idx else 1.0
    return out


def check_grading_basis_independence(sig: MetricSignature, trials: int, rng: np.random.Generator) -> TheoremReport:
    alg = algebra_for(sig)
    acc = _Residuals()
    for _ in range(trials):
        c = random_basis_change(sig, rng)
        for m in range(sig.n + 1):
            for idx in itertools.combinations(range(sig.n), m):
                b = _basis_blade(alg, c, idx)
                off_grade = np.where(alg.grades == m, 0.0, b)
                acc.add("single_grade", residual(off_grade, 0.0 * b))
                acc.add("minor_formula", residual(b, _minor_expansion(alg, c, idx)))
    return acc.report("grading_basis_independence", sig, trials, GRADING_TOL)


# centers


def _nullspace(mat: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the nullspace using the rank threshold."""
    _, s, vt = np.linalg.svd(mat)
    rank = int(np.sum(s > RANK_THRESHOLD))
    return vt[rank:].T


def _subspace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Zero iff the column spans agree; inf if the dimensions differ."""
    if a.shape[1] != b.shape[1]:
        return float("inf")
    if a.shape[1] == 0:
        return 0.0
    qa, _ = np.linalg.qr(a)
    qb, _ = np.linalg.qr(b)
    return float(np.abs(qa @ qa.T - qb @ qb.T).max())


def _span(dim: int, indices) -> np.ndarray:
    return np.eye(dim)[:, sorted(indices)]


def center_basis(sig: MetricSignature) -> np.ndarray:
    """Centre of the algebra as a nullspace of the stacked maps x -> x e_i - e_i x."""
    alg = algebra_for(sig)
    blocks = []
    for i in range(sig.n):
        e = np.zeros(alg.dim)
        e[1 << i] = 1.0
        blocks.append(alg.right_matrix(e) - alg.left_matrix(e))
    return _nullspace(np.vstack(blocks)) if blocks else np.eye(1)


def twisted_center_basis(sig: MetricSignature) -> np.ndarray:
    """Solutions y of alpha(y) v = v y for every basis vector v."""
    alg = algebra_for(sig)
    blocks = []
    for i in range(sig.n):
        e = np.zeros(alg.dim)
        e[1 << i] = 1.0
        blocks.append(alg.right_matrix(e) * alg.alpha_sign[None, :] - alg.left_matrix(e))
    return _nullspace(np.vstack(blocks)) if blocks else np.eye(1)


def _radical_blades(alg: Algebra) -> list[int]:
    return [a for a in range(alg.dim) if a & ~alg.radical_mask == 0]


def predicted_center(sig: MetricSignature) -> np.ndarray:
    """Even radical subalgebra, plus the pseudoscalar when n is odd."""
    alg = algebra_for(sig)
    idx = {a for a in _radical_blades(alg) if alg.grades[a] % 2 == 0}
    if sig.n % 2 == 1:
        idx.add(alg.dim - 1)
    return _span(alg.dim, idx)


def predicted_twisted_center(sig: MetricSignature) -> np.ndarray:
    """The whole radical subalgebra."""
    alg = algebra_for(sig)
    return _span(alg.dim, _radical_blades(alg))


def _subspace_report(theorem: str, sig: MetricSignature, got: np.ndarray, want: np.ndarray) -> TheoremReport:
    acc = _Residuals()
    acc.add("dimension", float(abs(got.shape[1] - want.shape[1])))
    acc.add("subspace", _subspace_distance(got, want))
    return acc.report(theorem, sig, 1, RANK_THRESHOLD)


def check_center(sig: MetricSignature) -> TheoremReport:
    got, want = center_basis(sig), predicted_center(sig)
    return _subspace_report("center", sig, got, want)


def check_twisted_center(sig: MetricSignature) -> TheoremReport:
    got, want = twisted_center_basis(sig), predicted_twisted_center(sig)
    return _subspace_report("twisted_center", sig, got, want)


# twisted conjugation


def _random_mv(sig: MetricSignature, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(size=sig.dim)


def _qbar(alg: Algebra, x: np.ndarray) -> float:
    return float(np.sum(x * x * alg.metric_sign))


def _bbar(alg: Algebra, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(x * y * alg.metric_sign))


def random_polynomial(rng: np.random.Generator, variables: int = 3, degree: int = 3, terms: int = 4):
    """Random real combination of monomials in up to ``variables`` multivectors;
    each monomial is an ordered product of at most ``degree`` factors."""
    monomials = []
    for _ in range(terms):
        d = int(rng.integers(0, degree + 1))
        monomials.append((float(rng.normal()), tuple(int(v) for v in rng.integers(0, variables, size=d))))
    return monomials


def eval_polynomial(alg: Algebra, poly, xs: list[np.ndarray]) -> np.ndarray:
    out = np.zeros(alg.dim)
    for coeff, factors in poly:
        term = np.zeros(alg.dim)
        term[0] = 1.0
        for v in factors:
            term = alg.gp(term, xs[v])
        out = out + coeff * term
    return out


def _delta(sig: MetricSignature) -> np.ndarray:
    return np.diag(sig.metric)


def _rho_trial(sig: MetricSignature, rng: np.random.Generator, acc: _Residuals) -> None:
    alg = algebra_for(sig)
    w1, w2 = random_versor(sig, rng), random_versor(sig, rng)
    x, y = _random_mv(sig, rng), _random_mv(sig, rng)
    rx, ry = rho_coeffs(w1, x), rho_coeffs(w1, y)
    k1, k12 = conditioning(w1), conditioning(w1, w2)

    acc.add("additivity", residual(rho_coeffs(w1, x + y), rx + ry), k1)
    acc.add("multiplicativity", residual(rho_coeffs(w1, alg.gp(x, y)), alg.gp(rx, ry)), k1)
    c = np.zeros(sig.dim)
    c[0] = rng.normal()
    acc.add("scalars_fixed", residual(rho_coeffs(w1, c), c), k1)
    acc.add("composition", residual(rho_coeffs(w2, rx), rho_coeffs(w2 * w1, x)), k12)
    acc.add("inverse", residual(rho_coeffs(w1.inv(), rx), x), k1)
    acc.add("bbar_preserved", residual(_bbar(alg, rx, ry), _bbar(alg, x, y)), k1)
    acc.add("qbar_preserved", residual(_qbar(alg, rx), _qbar(alg, x)), k1)
    for m in range(sig.n + 1):
        mask = alg.grades == m
        acc.add("grade_equivariance", residual(rho_coeffs(w1, np.where(mask, x, 0.0)), np.where(mask, rx, 0.0)), k1)

    poly = random_polynomial(rng)
    xs = [x, y, _random_mv(sig, rng)]
    lhs = rho_coeffs(w1, eval_polynomial(alg, poly, xs))
    rhs = eval_polynomial(alg, poly, [rho_coeffs(w1, v) for v in xs])
    acc.add("polynomial_equivariance", residual(lhs, rhs), k1)

    if sig.r:
        g = sample_radical_unit(sig, rng)
        acc.add("radical_kernel", residual(rho_coeffs(g, x), x))
        f = np.zeros(sig.dim)
        f[[1 << i for i in sig.radical_indices]] = rng.normal(size=sig.r)
        acc.add("radical_fixed", residual(rho_coeffs(w1, f), f), k1)

    # a single non-null vector acts on vectors as the reflection formula says
    u = rng.normal(size=sig.n)
    qu = float(np.sum(sig.metric * u * u))
    if abs(qu) > 1e-3:
        v = rng.normal(size=sig.n)
        vec = np.zeros(sig.dim)
        vec[1 << np.arange(sig.n)] = v
        want = np.zeros(sig.dim)
        want[1 << np.arange(sig.n)] = v - 2.0 * float(np.sum(sig.metric * u * v)) / qu * u
        refl = Versor.from_generators(sig, [VectorGen(tuple(u))])
        acc.add("reflection", residual(rho_coeffs(refl, vec), want), conditioning(refl))

    mat = rho_matrix(w1, 1)
    delta = _delta(sig)
    acc.add("range_orthogonal", residual(mat.T @ delta @ mat, delta), k1)
    m = sig.nondegenerate_dim
    if sig.r:
        acc.add("range_radical_block", residual(mat[m:, m:], np.eye(sig.r)), k1)
        acc.add("range_radical_block", residual(mat[:m, m:], 0.0 * mat[:m, m:]), k1)
    lifted = lift_orthogonal(extract_orthogonal(w1))
    acc.add("roundtrip", residual(rho_matrix(lifted, 1), mat), k1)

    qbar_product = _qbar(alg, (w1 * w2).expanded.coeffs)
    qbar_factors = _qbar(alg, w1.expanded.coeffs) * _qbar(alg, w2.expanded.coeffs)
    acc.add("norm_multiplicativity", residual(qbar_product, qbar_factors), k12)


def check_rho_identity_suite(sig: MetricSignature, trials: int, rng: np.random.Generator) -> TheoremReport:
    """All twisted-conjugation invariants over random versors and multivectors;
    ``details`` holds the worst residual per property."""
    acc = _Residuals()
    for _ in range(trials):
        _rho_trial(sig, rng, acc)
    return acc.report("rho_identities", sig, trials, RHO_TOL)


def check_polynomial_equivariance(sig: MetricSignature, trials: int, rng: np.random.Generator) -> TheoremReport:
    """Random degree <= 3 polynomials in three variables commute with rho(w),
    and so does every grade projection of them."""
    alg = algebra_for(sig)
    acc = _Residuals()
    for _ in range(trials):
        w = random_versor(sig, rng)
        k = conditioning(w)
        xs = [_random_mv(sig, rng) for _ in range(3)]
        poly = random_polynomial(rng)
        value = eval_polynomial(alg, poly, xs)
        lhs = rho_coeffs(w, value)
        rhs = eval_polynomial(alg, poly, [rho_coeffs(w, v) for v in xs])
        acc.add("polynomial", residual(lhs, rhs), k)
        for m in range(sig.n + 1):
            mask = alg.grades == m
            acc.add("grade_projection", residual(rho_coeffs(w, np.where(mask, value, 0.0)), np.where(mask, rhs, 0.0)), k)
    return acc.report("polynomial_equivariance", sig, trials, POLYNOMIAL_TOL)


def check_orthogonality(sig: MetricSignature, trials: int, rng: np.random.Generator) -> TheoremReport:
    alg = algebra_for(sig)
    acc = _Residuals()
    g = np.diag(alg.metric_sign)
    delta = _delta(sig)
    for _ in range(trials):
        w = random_versor(sig, rng)
        k = conditioning(w)
        x, y = _random_mv(sig, rng), _random_mv(sig, rng)
        rx, ry = rho_coeffs(w, x), rho_coeffs(w, y)
        acc.add("bbar", residual(_bbar(alg, rx, ry), _bbar(alg, x, y)), k)
        acc.add("qbar", residual(_qbar(alg, rx), _qbar(alg, x)), k)
        full = rho_full_matrix(w)
        acc.add("full_isometry", residual(full.T @ g @ full, g), k)
        mat = rho_matrix(w, 1)
        acc.add("grade1_isometry", residual(mat.T @ delta @ mat, delta), k)
    return acc.report("orthogonality", sig, trials, RHO_TOL)


def check_lift_roundtrip(sig: MetricSignature, trials: int, rng: np.random.Generator) -> TheoremReport:
    """Random radical-preserving orthogonal maps (built without versors) are
    lifted to versors and read back."""
    acc = _Residuals()
    for _ in range(trials):
        phi = random_radical_preserving_map(sig, rng)
        w = lift_orthogonal(phi)
        acc.add("lift_extract", residual(rho_matrix(w, 1), phi.matrix))
    return acc.report("lift_roundtrip", sig, trials, ROUNDTRIP_TOL)


def check_degenerate_examples(sig: MetricSignature, trials: int, rng: np.random.Generator) -> TheoremReport:
    """In degenerate signatures: gamma = 1 + e f sends v to v - 2 b(e, v) f, and
    even radical units act trivially."""
    acc = _Residuals()
    if not sig.r or not sig.nondegenerate_dim:
        return acc.report("degenerate_examples", sig, 0, DEGENERATE_TOL)
    metric = sig.metric
    for _ in range(trials):
        i = int(rng.integers(sig.nondegenerate_dim))
        coeffs = rng.uniform(-1.0, 1.0, size=sig.r)
        gamma = Versor.from_generators(sig, [GammaGen(i, tuple(coeffs))])
        v = rng.normal(size=sig.n)
        vec = np.zeros(sig.dim)
        vec[1 << np.arange(sig.n)] = v
        f = np.zeros(sig.n)
        f[list(sig.radical_indices)] = coeffs
        expected = v - 2.0 * metric[i] * v[i] * f
        got = rho_coeffs(gamma, vec)
        want = np.zeros(sig.dim)
        want[1 << np.arange(sig.n)] = expected
        acc.add("gamma_action", residual(got, want))
        g = sample_radical_unit(sig, rng)
        acc.add("radical_unit_identity", residual(rho_full_matrix(g), np.eye(sig.dim)))
    return acc.report("degenerate_examples", sig, trials, DEGENERATE_TOL)


NETWORK_TOL = 1e-7


def probe_architecture(sig: MetricSignature, channels: int = 2, hidden: int = 4) -> dict:
    """A small stack using every layer type once."""
    return {
        "signature": str(sig),
        "layers": [
            {"type": "linear", "in": channels, "out": hidden},
            {"type": "product_elementwise", "channels": hidden},
            {"type": "gate"},
            {"type": "product_full", "in": hidden, "out": hidden},
            {"type": "norm", "channels": hidden},
            {"type": "linear", "in": hidden, "out": channels},
        ],
    }


def check_network_equivariance(
    sig: MetricSignature,
    trials: int,
    rng: np.random.Generator,
    net: Network | None = None,
    params: dict[str, np.ndarray] | None = None,
    batch: int = 4,
) -> TheoremReport:
    """forward(rho(w) x) against rho(w) forward(x) for random versors and inputs;
    random parameters are drawn per trial unless ``params`` is given."""
    net = Network.from_spec(probe_architecture(sig)) if net is None else net
    if net.sig != sig:
        raise ValueError(f"network signature {net.sig} does not match {sig}")
    c_in = _input_channels(net)
    acc = _Residuals()
    for _ in range(trials):
        p = net.init_params(rng) if params is None else params
        if params is None:
            # default init leaves biases and norm scales at zero; perturb them
            p = {k: v + 0.1 * rng.normal(size=v.shape) for k, v in p.items()}
        w = random_versor(sig, rng)
        x = rng.normal(size=(batch, c_in, sig.dim))
        lhs = ad.value(net.apply(p, rho_coeffs(w, x)))
        rhs = rho_coeffs(w, ad.value(net.apply(p, x)))
        acc.add("forward", residual(lhs, rhs), conditioning(w))
    return acc.report("network_equivariance", sig, trials, NETWORK_TOL)


def _input_channels(net: Network) -> int:
    first = net.layers[0].spec()
    return first.get("in", first.get("channels"))


CHECKS: dict[str, Callable[..., TheoremReport]] = {
    "grading_basis_independence": check_grading_basis_independence,
    "center": lambda sig, trials, rng: check_center(sig),
    "twisted_center": lambda sig, trials, rng: check_twisted_center(sig),
    "rho_identities": check_rho_identity_suite,
    "polynomial_equivariance": check_polynomial_equivariance,
    "orthogonality": check_orthogonality,
    "lift_roundtrip": check_lift_roundtrip,
    "degenerate_examples": check_degenerate_examples,
}


def run_all(sig: MetricSignature, trials: int, seed: int, names=None, threads: int = 1) -> list[TheoremReport]:
    """Run the named checks (all by default); each gets its own child seed so
    the result does not depend on which other checks ran or in which order."""
    names = list(CHECKS) if names is None else list(names)
    seeds = dict(zip(CHECKS, np.random.SeedSequence(seed).spawn(len(CHECKS))))

    def one(name):
        return CHECKS[name](sig, trials, np.random.default_rng(seeds[name]))

    if threads <= 1:
        return [one(name) for name in names]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, names))
