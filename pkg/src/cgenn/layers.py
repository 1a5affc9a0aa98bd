"""Clifford-group-equivariant layers over channels of multivectors.

Activations are arrays of shape ``(..., channels, 2**n)``. Layers hold no
state beyond their shapes; parameters live in a flat ``name -> array``
mapping so that the same forward code runs on plain arrays or on taped
:class:`~cgenn.autodiff.Var` nodes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .algebra import MetricSignature, algebra_for

NORM_EPS = 1e-6


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class MVChannels:
    """A tuple of multivector channels sharing one signature; coeffs is (..., l, 2**n)."""

    signature: MetricSignature
    coeffs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.coeffs, dtype=float)
        if arr.ndim < 2 or arr.shape[-1] != self.signature.dim:
            raise ShapeMismatch(f"expected (..., channels, {self.signature.dim}), got {arr.shape}")
        object.__setattr__(self, "coeffs", arr)

    @property
    def channels(self) -> int:
        return self.coeffs.shape[-2]


def embed(sig: MetricSignature, scalars, vectors) -> MVChannels:
    """Scalars (..., k) go to grade 0, vectors (..., l - k, n) to grade 1."""
    scalars = np.asarray(scalars, dtype=float)
    vectors = np.asarray(vectors, dtype=float)
    if vectors.size == 0:
        vectors = vectors.reshape(scalars.shape[:-1] + (0, sig.n))
    if scalars.size == 0:
        scalars = scalars.reshape(vectors.shape[:-2] + (0,))
    if vectors.shape[-1] != sig.n:
        raise ShapeMismatch(f"vectors must have {sig.n} coordinates, got {vectors.shape[-1]}")
    lead = np.broadcast_shapes(scalars.shape[:-1], vectors.shape[:-2])
    k = scalars.shape[-1]
    out = np.zeros(lead + (k + vectors.shape[-2], sig.dim))
    out[..., :k, 0] = scalars
    out[..., k:, 1 << np.arange(sig.n)] = vectors
    return MVChannels(sig, out)


def extract_scalar(y: MVChannels, c: int) -> np.ndarray:
    return y.coeffs[..., c, 0]


def extract_vector(y: MVChannels, c: int) -> np.ndarray:
    return y.coeffs[..., c, 1 << np.arange(y.signature.n)]


def extract_pseudoscalar(y: MVChannels, c: int) -> np.ndarray:
    return y.coeffs[..., c, y.signature.dim - 1]


def _normal(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    return rng.normal(scale=1.0 / np.sqrt(max(fan_in, 1)), size=shape)


class Layer:
    kind: str = ""

    def __init__(self, sig: MetricSignature):
        self.sig = sig
        self.alg = algebra_for(sig)

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        return {}

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {}

    def __call__(self, params: Mapping[str, Any], x):
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError

    def _check_channels(self, x, expected: int):
        got = ad.value(x).shape[-2]
        if got != expected:
            raise ShapeMismatch(f"{self.kind} expects {expected} input channels, got {got}")


class MVLinear(Layer):
    """Grade-wise channel mixing, with a learnable invariant bias on grade 0."""

    kind = "linear"

    def __init__(self, sig: MetricSignature, c_in: int, c_out: int, bias: bool = True):
        super().__init__(sig)
        self.c_in = c_in
        self.c_out = c_out
        self.bias = bias

    def param_shapes(self):
        shapes = {"phi": (self.c_out, self.c_in, self.sig.n + 1)}
        if self.bias:
            shapes["bias"] = (self.c_out,)
        return shapes

    def init_params(self, rng):
        params = {"phi": _normal(rng, self.c_in * (self.sig.n + 1), self.param_shapes()["phi"])}
        if self.bias:
            params["bias"] = np.zeros(self.c_out)
        return params

    def __call__(self, params, x):
        self._check_channels(x, self.c_in)
        return ad.grade_linear(x, params["phi"], params.get("bias"), self.alg)

    def spec(self):
        return {"type": self.kind, "in": self.c_in, "out": self.c_out, "bias": self.bias}


class MVNormalize(Layer):
    """x^(m) / (sigmoid(a_m) (qbar(x^(m)) - 1) + 1) for m >= 1; grade 0 untouched."""

    kind = "norm"

    def __init__(self, sig: MetricSignature, channels: int | None = None):
        super().__init__(sig)
        self.channels = channels
        n = sig.n
        # maps sigmoid(a) (n,) onto grades 0..n with a zero weight for grade 0
        self._shift = np.eye(n, n + 1, k=1)

    def param_shapes(self):
        return {"a": (self.sig.n,)}

    def init_params(self, rng):
        return {"a": np.zeros(self.sig.n)}

    def __call__(self, params, x):
        if self.channels is not None:
            self._check_channels(x, self.channels)
        alg = self.alg
        weight = ad.matmul(ad.sigmoid(params["a"]), self._shift)
        qbar = ad.grade_qbar(x, alg)
        denom = ad.guard_denominator(weight * (qbar - 1.0) + 1.0, NORM_EPS)
        return x / ad.expand_grades(denom, alg)

    def spec(self):
        return {"type": self.kind, "channels": self.channels}


class GatedNonlinearity(Layer):
    """ReLU on grade 0, sigmoid(qbar(x^(m))) * x^(m) on every other grade."""

    kind = "gate"

    def __init__(self, sig: MetricSignature):
        super().__init__(sig)
        scalar = np.zeros(sig.dim)
        scalar[0] = 1.0
        self._scalar = scalar
        self._rest = 1.0 - scalar

    def __call__(self, params, x):
        gates = ad.expand_grades(ad.sigmoid(ad.grade_qbar(x, self.alg)), self.alg)
        return ad.relu(x) * self._scalar + x * gates * self._rest

    def spec(self):
        return {"type": self.kind}


class _ProductBase(Layer):
    def __init__(self, sig: MetricSignature, c_in: int, normalize: bool):
        super().__init__(sig)
        self.table = ad.ProductTable(self.alg)
        self.c_in = c_in
        self.normalize = normalize
        # separate parameters from any standalone linear layer
        self.mix = MVLinear(sig, c_in, c_in)
        self.norm = MVNormalize(sig, c_in)

    def _sub_shapes(self):
        shapes = {f"mix.{k}": v for k, v in self.mix.param_shapes().items()}
        if self.normalize:
            shapes.update({f"norm.{k}": v for k, v in self.norm.param_shapes().items()})
        return shapes

    def _sub_init(self, rng):
        params = {f"mix.{k}": v for k, v in self.mix.init_params(rng).items()}
        if self.normalize:
            params.update({f"norm.{k}": v for k, v in self.norm.init_params(rng).items()})
        return params

    def right_operand(self, params, x):
        y = self.mix({k[4:]: v for k, v in params.items() if k.startswith("mix.")}, x)
        if self.normalize:
            y = self.norm({k[5:]: v for k, v in params.items() if k.startswith("norm.")}, y)
        return y


class GeometricProductElementwise(_ProductBase):
    """Per-channel parameterised product of x with a learned linear mix of x."""

    kind = "product_elementwise"

    def __init__(self, sig: MetricSignature, channels: int, normalize: bool = True):
        super().__init__(sig, channels, normalize)
        self.channels = channels

    def param_shapes(self):
        return {"phi": (self.channels, self.table.size), **self._sub_shapes()}

    def init_params(self, rng):
        phi = _normal(rng, self.table.size, (self.channels, self.table.size))
        return {"phi": phi, **self._sub_init(rng)}

    def __call__(self, params, x):
        self._check_channels(x, self.channels)
        y = self.right_operand(params, x)
        return self.product(params["phi"], x, y)

    def product(self, phi, x, y):
        if ad.value(x).shape[-2:] != ad.value(y).shape[-2:]:
            raise ShapeMismatch("operands must have equal channel counts")
        return ad.gp_elementwise(x, y, phi, self.table)

    def spec(self):
        return {"type": self.kind, "channels": self.channels, "normalize": self.normalize}


class GeometricProductFull(_ProductBase):
    """Products of (x_c, y_c) pairs, linearly combined over input channels."""

    kind = "product_full"

    def __init__(self, sig: MetricSignature, c_in: int, c_out: int, normalize: bool = True):
        super().__init__(sig, c_in, normalize)
        self.c_out = c_out

    def param_shapes(self):
        return {"phi": (self.c_out, self.c_in, self.table.size), **self._sub_shapes()}

    def init_params(self, rng):
        phi = _normal(rng, self.c_in * self.table.size, (self.c_out, self.c_in, self.table.size))
        return {"phi": phi, **self._sub_init(rng)}

    def __call__(self, params, x):
        self._check_channels(x, self.c_in)
        y = self.right_operand(params, x)
        return self.product(params["phi"], x, y)

    def product(self, phi, x, y):
        if ad.value(x).shape[-2:] != ad.value(y).shape[-2:]:
            raise ShapeMismatch("operands must have equal channel counts")
        return ad.gp_full(x, y, phi, self.table)

    def spec(self):
        return {"type": self.kind, "in": self.c_in, "out": self.c_out, "normalize": self.normalize}


def _layer_from_spec(sig: MetricSignature, spec: Mapping[str, Any]) -> Layer:
    kind = spec.get("type")
    if kind == "linear":
        return MVLinear(sig, spec["in"], spec["out"], spec.get("bias", True))
    if kind == "norm":
        return MVNormalize(sig, spec.get("channels"))
    if kind == "gate":
        return GatedNonlinearity(sig)
    if kind == "product_elementwise":
        return GeometricProductElementwise(sig, spec["channels"], spec.get("normalize", True))
    if kind == "product_full":
        return GeometricProductFull(sig, spec["in"], spec["out"], spec.get("normalize", True))
    raise ValueError(f"unknown layer type {kind!r}")


class Network:
    """An ordered stack of layers; parameters are named ``<position>.<name>``."""

    def __init__(self, sig: MetricSignature, layers: Sequence[Layer] = ()):
        self.sig = sig
        self.layers = list(layers)

    @classmethod
    def from_spec(cls, spec: Mapping[str, Any]) -> "Network":
        sig = MetricSignature.parse(spec["signature"])
        return cls(sig, [_layer_from_spec(sig, s) for s in spec.get("layers", [])])

    def spec(self) -> dict:
        return {"signature": str(self.sig), "layers": [layer.spec() for layer in self.layers]}

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        params = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.init_params(rng).items():
                params[f"{i}.{name}"] = arr
        return params

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for i, layer in enumerate(self.layers):
            for name, shape in layer.param_shapes().items():
                shapes[f"{i}.{name}"] = shape
        return shapes

    def __call__(self, params: Mapping[str, Any], x):
        if isinstance(x, MVChannels):
            if x.signature != self.sig:
                raise ShapeMismatch(f"input signature {x.signature} != network signature {self.sig}")
            return MVChannels(self.sig, ad.value(self.apply(params, x.coeffs)))
        return self.apply(params, x)

    def apply(self, params: Mapping[str, Any], x):
        for i, layer in enumerate(self.layers):
            prefix = f"{i}."
            sub = {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}
            x = layer(sub, x)
        return x


def cgenn_forward(net: Network, params: Mapping[str, Any], x: MVChannels) -> MVChannels:
    return net(params, x)


_MAGIC = b"CGNNPRM1"


def save_params(path: str | Path, net: Network, params: Mapping[str, np.ndarray], seed: int | None = None,
                extra: Mapping[str, Any] | None = None) -> None:
    """Write a JSON header followed by the flat little-endian f64 parameter arrays.

    Layout: 8-byte magic, uint64 header length, UTF-8 JSON header, then the
    arrays concatenated in header order.
    """
    names = list(params)
    header = {
        "signature": str(net.sig),
        "seed": seed,
        "architecture": net.spec(),
        "arrays": [{"name": k, "shape": list(np.shape(params[k]))} for k in names],
    }
    if extra:
        header.update(extra)
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for k in names:
            fh.write(np.ascontiguousarray(params[k], dtype="<f8").tobytes())


def load_params(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path} is not a parameter file")
    (size,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + size])
    offset = 16 + size
    params = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
        params[entry["name"]] = arr.astype(float)
        offset += 8 * count
    return header, params
