import numpy as np
import pytest

from cgenn.algebra import MetricSignature

SIGNATURES = [(3, 0, 0), (2, 0, 0), (1, 1, 0), (1, 3, 0), (5, 0, 0), (2, 0, 1), (1, 1, 1)]


@pytest.fixture(params=SIGNATURES, ids=lambda t: "sig{}{}{}".format(*t))
def sig(request):
    return MetricSignature(*request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brute_blade_product(a: int, b: int, metric) -> tuple[float, int]:
    """Concatenate index lists and bubble-sort them, contracting equal neighbours."""
    factors = [i for i in range(len(metric)) if a >> i & 1] + [i for i in range(len(metric)) if b >> i & 1]
    sign = 1.0
    changed = True
    while changed:
        changed = False
        for k in range(len(factors) - 1):
            if factors[k] > factors[k + 1]:
                factors[k], factors[k + 1] = factors[k + 1], factors[k]
                sign = -sign
                changed = True
            elif factors[k] == factors[k + 1]:
                sign *= metric[factors[k]]
                del factors[k : k + 2]
                changed = True
                break
    mask = 0
    for i in factors:
        mask |= 1 << i
    return sign, mask


def gradient_agreement(analytic: np.ndarray, numeric: np.ndarray, rel_tol=1e-5, abs_tol=1e-7, fraction=0.95):
    """Relative agreement on at least ``fraction`` of coordinates, absolute on the rest."""
    analytic = np.ravel(analytic)
    numeric = np.ravel(numeric)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel_ok = diff <= rel_tol * scale
    ok = bool(rel_ok.mean() >= fraction and np.all(rel_ok | (diff < abs_tol)))
    return ok, float(rel_ok.mean()), float(diff[~rel_ok].max(initial=0.0))


def central_differences(f, params: dict, h=1e-5) -> dict:
    out = {}
    for name, arr in params.items():
        grad = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            grad[idx] = (f(plus) - f(minus)) / (2 * h)
        out[name] = grad
    return out
