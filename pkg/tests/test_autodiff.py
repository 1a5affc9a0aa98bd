import numpy as np
import pytest

from cgenn import autodiff as ad
from cgenn.algebra import MetricSignature, algebra_for
from cgenn.layers import Network
from conftest import central_differences, gradient_agreement

GRAD_SIGNATURES = [MetricSignature(3), MetricSignature(2, 0, 1), MetricSignature(1, 1, 1)]

LAYER_SPECS = {
    "linear": {"type": "linear", "in": 2, "out": 3},
    "norm": {"type": "norm", "channels": 2},
    "gate": {"type": "gate"},
    "product_elementwise": {"type": "product_elementwise", "channels": 2},
    "product_elementwise_plain": {"type": "product_elementwise", "channels": 2, "normalize": False},
    "product_full": {"type": "product_full", "in": 2, "out": 2},
}


def taped_loss(net, params, x, weights):
    tape = ad.Tape()
    vars_ = {k: tape.param(k, v) for k, v in params.items()}
    xin = tape.leaf(x)
    out = net.apply(vars_, xin)
    loss = ad.sum_all(ad.mul(out, weights))
    return tape, loss, xin


def plain_loss(net, x, weights):
    return lambda p: float(np.sum(net.apply(p, x) * weights))


def perturbed_params(net, rng):
    # move off the zero-initialised biases and norm weights so every path is exercised
    return {k: v + 0.3 * rng.normal(size=v.shape) for k, v in net.init_params(rng).items()}


def assert_gradients_match(net, params, x, rng):
    out_shape = net.apply(params, x).shape
    weights = rng.normal(size=out_shape)
    tape, loss, xin = taped_loss(net, params, x, weights)
    grads = ad.backward(tape, loss, [xin])
    numeric = central_differences(plain_loss(net, x, weights), params)
    for name in params:
        ok, frac, worst = gradient_agreement(grads[name], numeric[name])
        assert ok, (name, frac, worst)
    f = lambda p: float(np.sum(net.apply(params, p["x"]) * weights))
    num_x = central_differences(f, {"x": x})["x"]
    ok, frac, worst = gradient_agreement(grads[xin.index], num_x)
    assert ok, ("input", frac, worst)


class TestElementary:
    def test_linear_in_parameter(self, rng):
        c = rng.normal(size=(3, 4))
        tape = ad.Tape()
        phi = tape.param("phi", rng.normal(size=(3, 4)))
        grads = ad.backward(tape, ad.sum_all(ad.mul(phi, c)))
        assert np.array_equal(grads["phi"], c)

    def test_qbar_gradient(self, sig, rng):
        alg = algebra_for(sig)
        x = rng.normal(size=sig.dim)
        tape = ad.Tape()
        xv = tape.param("x", x)
        grads = ad.backward(tape, ad.sum_all(ad.grade_qbar(xv, alg)))
        # product of q(e_i) over the generators of each blade
        pq = np.array([np.prod(sig.metric[[i for i in range(sig.n) if a >> i & 1]]) for a in range(sig.dim)])
        assert np.allclose(grads["x"], 2.0 * x * pq, atol=1e-14)

    def test_non_scalar_loss(self):
        tape = ad.Tape()
        x = tape.param("x", np.ones(3))
        with pytest.raises(ad.NonScalarLoss):
            ad.backward(tape, ad.mul(x, 2.0))

    def test_shared_node_accumulates(self):
        tape = ad.Tape()
        x = tape.param("x", np.array([3.0]))
        loss = ad.sum_all(ad.mul(x, x) + x)
        assert ad.backward(tape, loss)["x"][0] == pytest.approx(7.0)

    def test_unused_param_gets_zero(self):
        tape = ad.Tape()
        x = tape.param("x", np.ones(2))
        tape.param("unused", np.ones(4))
        grads = ad.backward(tape, ad.sum_all(x))
        assert np.array_equal(grads["unused"], np.zeros(4))

    def test_plain_arrays_skip_the_tape(self):
        out = ad.mul(np.ones(2), 3.0)
        assert isinstance(out, np.ndarray)

    def test_guard_is_flat(self):
        tape = ad.Tape()
        x = tape.param("x", np.array([1e-8, 2.0]))
        grads = ad.backward(tape, ad.sum_all(ad.guard_denominator(x)))
        assert np.array_equal(grads["x"], [0.0, 1.0])

    @pytest.mark.parametrize("op", ["relu", "sigmoid", "div", "matmul", "getitem", "mse"])
    def test_elementary_ops(self, op, rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2)) if op == "matmul" else rng.uniform(1.0, 2.0, size=(3, 4))

        def build(av, bv):
            if op == "relu":
                return ad.relu(av)
            if op == "sigmoid":
                return ad.sigmoid(av)
            if op == "div":
                return ad.div(av, bv)
            if op == "matmul":
                return ad.matmul(av, bv)
            if op == "getitem":
                return ad.getitem(av, (slice(None), [0, 2, 2]))
            return ad.mse(av, bv)

        tape = ad.Tape()
        va, vb = tape.param("a", a), tape.param("b", b)
        grads = ad.backward(tape, ad.sum_all(build(va, vb)))
        numeric = central_differences(lambda p: float(np.sum(build(p["a"], p["b"]))), {"a": a, "b": b})
        for name in ("a", "b"):
            assert gradient_agreement(grads[name], numeric[name])[0], name


class TestLayerGradients:
    @pytest.mark.parametrize("kind", sorted(LAYER_SPECS))
    @pytest.mark.parametrize("sig", GRAD_SIGNATURES, ids=str)
    def test_layer(self, kind, sig, rng):
        net = Network.from_spec({"signature": str(sig), "layers": [LAYER_SPECS[kind]]})
        params = perturbed_params(net, rng)
        x = rng.normal(size=(3, 2, sig.dim))
        assert_gradients_match(net, params, x, rng)

    @pytest.mark.parametrize("sig", GRAD_SIGNATURES, ids=str)
    def test_three_layer_network(self, sig, rng):
        spec = {
            "signature": str(sig),
            "layers": [
                {"type": "linear", "in": 2, "out": 3},
                {"type": "product_full", "in": 3, "out": 2},
                {"type": "gate"},
            ],
        }
        net = Network.from_spec(spec)
        params = perturbed_params(net, rng)
        x = rng.normal(size=(4, 2, sig.dim))
        assert_gradients_match(net, params, x, rng)

    def test_mse_through_network(self, rng):
        sig = MetricSignature(3)
        spec = {"signature": "3,0,0", "layers": [
            {"type": "product_elementwise", "channels": 2},
            {"type": "linear", "in": 2, "out": 1},
        ]}
        net = Network.from_spec(spec)
        params = perturbed_params(net, rng)
        x = rng.normal(size=(5, 2, sig.dim))
        target = rng.normal(size=5)

        def loss_of(p):
            return ad.mse(ad.getitem(net.apply(p, x), (slice(None), 0, 0)), target)

        tape = ad.Tape()
        grads = ad.backward(tape, loss_of({k: tape.param(k, v) for k, v in params.items()}))
        numeric = central_differences(lambda p: float(loss_of(p)), params)
        for name in params:
            assert gradient_agreement(grads[name], numeric[name])[0], name
