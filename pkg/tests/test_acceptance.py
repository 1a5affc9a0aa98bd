"""Acceptance criteria, one test each.  Every test prints a single
``ACCEPTANCE <n> PASS|FAIL ...`` line, also visible without ``-s``.

Run alone with ``pytest tests/test_acceptance.py`` or ``python3 tests/test_acceptance.py``.
"""

import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import central_differences, gradient_agreement  # noqa: E402

from cgenn import autodiff as ad  # noqa: E402
from cgenn.algebra import MetricSignature  # noqa: E402
from cgenn.layers import Network  # noqa: E402
from cgenn.theorems import (  # noqa: E402
    SUITE_SIGNATURES,
    center_basis,
    check_center,
    check_degenerate_examples,
    check_lift_roundtrip,
    check_orthogonality,
    check_polynomial_equivariance,
    check_rho_identity_suite,
    check_twisted_center,
    predicted_center,
    predicted_twisted_center,
    twisted_center_basis,
)
from cgenn.train import TrainConfig, train  # noqa: E402

SEED = 20240601

pytestmark = pytest.mark.slow


def announce(request, number, ok, detail):
    line = f"ACCEPTANCE {number} {'PASS' if ok else 'FAIL'} {detail}"
    capman = request.config.pluginmanager.getplugin("capturemanager")
    if capman is not None:
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
    else:
        print(line, flush=True)
    return ok


def rngs(count):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(SEED).spawn(count)]


def suite(check, trials):
    reports = [check(sig, trials, rng) for sig, rng in zip(SUITE_SIGNATURES, rngs(len(SUITE_SIGNATURES)))]
    worst = max(r.max_residual for r in reports)
    raw = max(r.raw_max_residual for r in reports)
    failed = [r.signature for r in reports if not r.passed]
    return reports, worst, raw, failed


def test_1_rho_identities(request):
    start = time.perf_counter()
    _, worst, raw, failed = suite(check_rho_identity_suite, 500)
    elapsed = time.perf_counter() - start
    ok = not failed and worst < 1e-8 and elapsed < 60.0
    detail = f"rho identities 500 trials x 7 signatures max_residual={worst:.3e} raw={raw:.3e} tol=1e-8 time={elapsed:.1f}s failed={failed}"
    assert announce(request, 1, ok, detail)


def test_2_polynomial_equivariance(request):
    _, worst, raw, failed = suite(check_polynomial_equivariance, 200)
    ok = not failed and worst < 1e-7
    assert announce(request, 2, ok, f"polynomials 200 trials max_residual={worst:.3e} raw={raw:.3e} tol=1e-7 failed={failed}")


def test_3_orthogonality(request):
    _, worst, raw, failed = suite(check_orthogonality, 500)
    ok = not failed and worst < 1e-8
    assert announce(request, 3, ok, f"bbar/qbar/M^T D M 500 trials max_residual={worst:.3e} raw={raw:.3e} tol=1e-8 failed={failed}")


def test_4_centers(request):
    start = time.perf_counter()
    mismatched = []
    for sig in SUITE_SIGNATURES:
        dims = (center_basis(sig).shape[1], twisted_center_basis(sig).shape[1])
        want = (predicted_center(sig).shape[1], predicted_twisted_center(sig).shape[1])
        if dims != want or not (check_center(sig).passed and check_twisted_center(sig).passed):
            mismatched.append((str(sig), dims, want))
    elapsed = time.perf_counter() - start
    ok = not mismatched and elapsed < 30.0
    assert announce(request, 4, ok, f"center and twisted center dimensions 7 signatures time={elapsed:.2f}s mismatched={mismatched}")


def test_5_lift_roundtrip(request):
    _, worst, raw, failed = suite(check_lift_roundtrip, 200)
    ok = not failed and worst < 1e-6
    assert announce(request, 5, ok, f"lift then extract 200 maps max_residual={worst:.3e} tol=1e-6 failed={failed}")


GRAD_LAYERS = [
    {"type": "linear", "in": 2, "out": 2},
    {"type": "norm", "channels": 2},
    {"type": "gate"},
    {"type": "product_elementwise", "channels": 2},
    {"type": "product_full", "in": 2, "out": 2},
]
GRAD_NETWORK = [
    {"type": "linear", "in": 2, "out": 3},
    {"type": "product_full", "in": 3, "out": 2},
    {"type": "gate"},
]


def gradient_case(sig, layers, rng):
    net = Network.from_spec({"signature": str(sig), "layers": layers})
    params = {k: v + 0.3 * rng.normal(size=v.shape) for k, v in net.init_params(rng).items()}
    x = rng.normal(size=(3, 2, sig.dim))
    weights = rng.normal(size=net.apply(params, x).shape)
    # the input joins the parameters so parameter-free layers are checked too
    values = {**params, "input": x}
    tape = ad.Tape()
    taped = {k: tape.param(k, v) for k, v in values.items()}
    out = net.apply({k: v for k, v in taped.items() if k != "input"}, taped["input"])
    grads = ad.backward(tape, ad.sum_all(ad.mul(out, weights)))

    def loss(v):
        return float(np.sum(net.apply({k: a for k, a in v.items() if k != "input"}, v["input"]) * weights))

    numeric = central_differences(loss, values, h=1e-5)
    return [gradient_agreement(grads[k], numeric[k]) for k in values]


def test_6_gradients(request):
    rng = np.random.default_rng(SEED)
    bad = []
    cases = 0
    for sig in (MetricSignature(3), MetricSignature(2, 0, 1)):
        for layers in [[spec] for spec in GRAD_LAYERS] + [GRAD_NETWORK]:
            for ok, frac, worst in gradient_case(sig, layers, rng):
                cases += 1
                if not ok:
                    bad.append((str(sig), [s["type"] for s in layers], frac, worst))
    ok = not bad
    assert announce(request, 6, ok, f"finite differences h=1e-5 {cases} parameter arrays rel<1e-5 on >=95% abs<1e-7 failures={bad}")


def test_7_signed_volume(request, tmp_path):
    start = time.perf_counter()
    result = train(TrainConfig("signed-volume", n_train=1024, n_test=256, seed=SEED % 1000), tmp_path / "pseudo")
    elapsed = time.perf_counter() - start
    ablation = train(
        TrainConfig("signed-volume", n_train=1024, n_test=256, seed=SEED % 1000, head="scalar"), tmp_path / "scalar"
    )
    var = float(np.var(result.data["test"][1]))
    ok = result.test_mse < 1e-2 and elapsed < 300.0 and ablation.test_mse > 0.5 * var
    detail = (
        f"signed volume test_mse={result.test_mse:.3e} (<1e-2) time={elapsed:.1f}s; "
        f"scalar head test_mse={ablation.test_mse:.3f} vs 0.5*label_var={0.5 * var:.3f}"
    )
    assert announce(request, 7, ok, detail)


def test_8_o5_regression(request, tmp_path):
    start = time.perf_counter()
    cfg = TrainConfig("o5-regression", n_train=1000, n_val=500, n_test=1000, epochs=40, lr=3e-3, seed=SEED % 1000)
    result = train(cfg, tmp_path)
    elapsed = time.perf_counter() - start
    y_train, y_test = result.data["train"][1], result.data["test"][1]
    baseline = float(np.mean((y_test - y_train.mean()) ** 2))
    ratio = baseline / result.test_mse
    ok = ratio >= 10.0 and elapsed < 300.0
    detail = f"O(5) test_mse={result.test_mse:.4f} mean_predictor={baseline:.4f} ratio={ratio:.1f} (>=10) time={elapsed:.1f}s"
    assert announce(request, 8, ok, detail)


def test_9_degenerate(request):
    report = check_degenerate_examples(MetricSignature(2, 0, 1), 500, np.random.default_rng(SEED))
    ok = report.passed and report.trials == 500 and report.max_residual < 1e-10
    assert announce(request, 9, ok, f"(2,0,1) gamma action and even radical units 500 trials {report.details} tol=1e-10")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
