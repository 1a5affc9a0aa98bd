"""Minimal reverse-mode autodiff over numpy arrays.

Every op accepts plain arrays or :class:`Var` nodes. With no ``Var`` among the
inputs an op just returns the numpy result, so the same layer code serves
both plain evaluation and taped training.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .algebra import Algebra


class NonScalarLoss(ValueError):
    pass


class Var:
    __slots__ = ("value", "tape", "index")
    __array_ufunc__ = None

    def __init__(self, value: np.ndarray, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return getitem(self, key)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, index={self.index})"


@dataclass
class _Node:
    op: str
    parents: tuple[int | None, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None


@dataclass
class Tape:
    """Append-only record of operations; backward walks it in exact reverse."""

    nodes: list[_Node] = field(default_factory=list)
    params: dict[str, Var] = field(default_factory=dict)

    def leaf(self, value) -> Var:
        self.nodes.append(_Node("leaf", (), None))
        return Var(np.asarray(value, dtype=float), self, len(self.nodes) - 1)

    def param(self, name: str, value) -> Var:
        var = self.leaf(value)
        self.params[name] = var
        return var

    def record(self, op: str, value: np.ndarray, inputs: Sequence, vjp) -> Var:
        parents = tuple(a.index if isinstance(a, Var) and a.tape is self else None for a in inputs)
        self.nodes.append(_Node(op, parents, vjp))
        return Var(value, self, len(self.nodes) - 1)


def value(a):
    return a.value if isinstance(a, Var) else np.asarray(a, dtype=float)


def _op(name: str, out: np.ndarray, inputs: Sequence, vjp) -> np.ndarray | Var:
    for a in inputs:
        if isinstance(a, Var):
            return a.tape.record(name, out, inputs, vjp)
    return out


def backward(tape: Tape, loss: Var, wrt: Sequence[Var] = ()) -> dict:
    """Gradients of a scalar ``loss``: by parameter name, plus any extra leaves
    passed in ``wrt`` (keyed by the Var's node index)."""
    if loss.value.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.value.shape}")
    grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
    for idx in range(loss.index, -1, -1):
        g = grads.get(idx)
        node = tape.nodes[idx]
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if parent is None or pg is None:
                continue
            if parent in grads:
                grads[parent] = grads[parent] + pg
            else:
                grads[parent] = pg
    out: dict = {}
    for name, var in tape.params.items():
        out[name] = grads.get(var.index, np.zeros_like(var.value))
    for v in wrt:
        out[v.index] = grads.get(v.index, np.zeros_like(v.value))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# elementwise arithmetic

def add(a, b):
    av, bv = value(a), value(b)
    return _op("add", av + bv, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value(a), value(b)
    return _op("sub", av - bv, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value(a), value(b)
    return _op(
        "mul",
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    return _op(
        "div",
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
    )


def neg(a):
    return _op("neg", -value(a), (a,), lambda g: (-g,))


def relu(a):
    av = value(a)
    return _op("relu", np.maximum(av, 0.0), (a,), lambda g: (g * (av > 0),))


def sigmoid(a):
    av = value(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * av))
    return _op("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def guard_denominator(a, eps: float = 1e-6):
    """Replace |a| < eps by sign(a) * eps (sign(0) = +1); constant inside the guard."""
    av = value(a)
    small = np.abs(av) < eps
    out = np.where(small, np.where(av < 0, -eps, eps), av)
    return _op("guard", out, (a,), lambda g: (np.where(small, 0.0, g),))


def sum_all(a):
    av = value(a)
    return _op("sum", np.array(av.sum()), (a,), lambda g: (np.broadcast_to(g, av.shape).copy(),))


def mean(a):
    av = value(a)
    return _op("mean", np.array(av.mean()), (a,), lambda g: (np.full(av.shape, g / av.size),))


def mse(pred, target):
    diff = sub(pred, target)
    return mean(mul(diff, diff))


def getitem(a, key):
    av = value(a)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, key, g)
        return (out,)

    return _op("getitem", av[key], (a,), vjp)


def matmul(a, b):
    av, bv = value(a), value(b)

    def vjp(g):
        ga = g @ np.swapaxes(bv, -1, -2) if bv.ndim > 1 else np.multiply.outer(g, bv)
        gb = np.swapaxes(av, -1, -2) @ g if av.ndim > 1 else np.multiply.outer(av, g)
        return (_unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape))

    return _op("matmul", av @ bv, (a, b), vjp)


# multivector-specific ops; arrays carry blades on the last axis

def grade_qbar(x, alg: Algebra):
    """Extended quadratic form of every grade part: (..., 2**n) -> (..., n + 1)."""
    xv = value(x)
    weighted = xv * alg.metric_sign
    out = (xv * weighted) @ alg.grade_onehot
    return _op("grade_qbar", out, (x,), lambda g: (2.0 * weighted * (g @ alg.grade_onehot.T),))


def expand_grades(s, alg: Algebra):
    """Broadcast per-grade values (..., n + 1) onto blades (..., 2**n)."""
    sv = value(s)
    return _op("expand_grades", sv @ alg.grade_onehot.T, (s,), lambda g: (g @ alg.grade_onehot,))


def grade_linear(x, phi, bias, alg: Algebra):
    """y[..., o, A] = sum_c phi[o, c, grade(A)] x[..., c, A], plus bias[o] on the scalar blade."""
    xv, pv = value(x), value(phi)
    weights = pv[:, :, alg.grades]
    out = np.einsum("...ca,oca->...oa", xv, weights)
    if bias is not None:
        out[..., 0] += value(bias)

    def vjp(g):
        gx = np.einsum("...oa,oca->...ca", g, weights)
        gw = np.einsum(
            "boa,bca->oca", g.reshape((-1,) + g.shape[-2:]), xv.reshape((-1,) + xv.shape[-2:])
        )
        gphi = gw @ alg.grade_onehot
        gb = None if bias is None else g[..., 0].reshape(-1, g.shape[-2]).sum(axis=0)
        return (gx, gphi, gb)

    return _op("grade_linear", out, (x, phi, bias), vjp)


class ProductTable:
    """Grade-triple parameterisation of the geometric product for one signature.

    Parameters are kept only for triples (i, j, k) that some nonzero blade
    product can realise; ``position[a, k]`` maps the term e_a e_{a^k} -> e_k to
    its parameter slot.
    """

    def __init__(self, alg: Algebra):
        self.alg = alg
        mask = alg.product_mask
        self.mask = mask
        self.triples = np.argwhere(mask)
        slot = -np.ones(mask.shape, dtype=np.int64)
        slot[mask] = np.arange(mask.sum())
        g = alg.grades
        a = np.arange(alg.dim)[:, None]
        k = np.arange(alg.dim)[None, :]
        pos = slot[g[a], g[a ^ k], g[k]]
        self.sign = alg.xor_sign
        self.position = np.where(pos < 0, 0, pos)

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    def weights(self, phi: np.ndarray) -> np.ndarray:
        """(..., size) parameters -> (..., 2**n, 2**n) weights W[a, k]."""
        return phi[..., self.position] * self.sign

    def param_grad(self, gw: np.ndarray) -> np.ndarray:
        gw = gw * self.sign
        lead = gw.shape[:-2]
        flat = gw.reshape(-1, gw.shape[-2] * gw.shape[-1])
        out = np.zeros((flat.shape[0], self.size))
        pos = self.position.ravel()
        for row in range(flat.shape[0]):
            out[row] = np.bincount(pos, weights=flat[row], minlength=self.size)
        return out.reshape(lead + (self.size,))

    def full_phi(self, phi: np.ndarray) -> np.ndarray:
        """Scatter compressed parameters into a dense (..., n+1, n+1, n+1) array."""
        n1 = self.mask.shape[0]
        out = np.zeros(phi.shape[:-1] + (n1, n1, n1))
        out[..., self.mask] = phi
        return out


def _shifted(alg: Algebra, y: np.ndarray) -> np.ndarray:
    # ys[..., a, k] = y[..., a ^ k]
    return y[..., alg.xor]


def _unshift_sum(alg: Algebra, t: np.ndarray) -> np.ndarray:
    # out[..., j] = sum_a t[..., a, a ^ j]
    idx = np.broadcast_to(alg.xor, t.shape)
    return np.take_along_axis(t, idx, axis=-1).sum(axis=-2)


def gp_elementwise(x, y, phi, table: ProductTable):
    """z[..., c, k] = sum_{i,j} phi[c, i, j, k] (x_c^(i) y_c^(j))^(k), per channel c."""
    alg = table.alg
    xv, yv, pv = value(x), value(y), value(phi)
    w = table.weights(pv)  # (C, D, D)
    ys = _shifted(alg, yv)  # (..., C, D, D)
    out = np.einsum("...ci,cik,...cik->...ck", xv, w, ys)

    def vjp(g):
        a = g[..., None, :] * w
        gx = np.einsum("...cik,...cik->...ci", a, ys)
        gy = _unshift_sum(alg, a * xv[..., :, None])
        c, d = xv.shape[-2:]
        gw = np.einsum(
            "bck,bci,bcik->cik", g.reshape(-1, c, d), xv.reshape(-1, c, d), ys.reshape(-1, c, d, d)
        )
        return (gx, gy, table.param_grad(gw))

    return _op("gp_elementwise", out, (x, y, phi), vjp)


def gp_full(x, y, phi, table: ProductTable):
    """z[..., o, k] = sum_c sum_{i,j} phi[o, c, i, j, k] (x_c^(i) y_c^(j))^(k)."""
    alg = table.alg
    d = alg.dim
    xv, yv, pv = value(x), value(y), value(phi)
    lead = xv.shape[:-2]
    c = xv.shape[-2]
    o = pv.shape[0]
    w = table.weights(pv)  # (O, C, D, D)
    ys = _shifted(alg, yv)
    prod = xv[..., :, :, None] * ys  # (..., C, D, D)
    # contract over (c, i) separately for each output blade k via batched matmul
    pk = np.moveaxis(prod.reshape((-1, c * d, d)), -1, 0)  # (D, B, C*D)
    wk = np.moveaxis(w.reshape(o, c * d, d), -1, 0)  # (D, O, C*D)
    zk = pk @ np.swapaxes(wk, -1, -2)  # (D, B, O)
    out = np.moveaxis(zk, 0, -1).reshape(lead + (o, d))

    def vjp(g):
        gk = np.moveaxis(g.reshape(-1, o, d), -1, 0)  # (D, B, O)
        gpk = gk @ wk  # (D, B, C*D)
        gprod = np.moveaxis(gpk, 0, -1).reshape(lead + (c, d, d))
        gwk = np.swapaxes(gk, -1, -2) @ pk  # (D, O, C*D)
        gw = np.moveaxis(gwk, 0, -1).reshape(o, c, d, d)
        gx = (gprod * ys).sum(axis=-1)
        gy = _unshift_sum(alg, gprod * xv[..., :, :, None])
        return (gx, gy, table.param_grad(gw))

    return _op("gp_full", out, (x, y, phi), vjp)
