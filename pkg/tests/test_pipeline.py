import mpmath as mp
import numpy as np
import pytest

from ergobound.ergodicity import BoundInputError
from ergobound.pipeline import BoundSettings, canonical_json, compute_bounds, cubic_family, linear_tv_curves, scaled_bound

FAST = dict(moment_budget=2000, k_budget=20000, n_delta=5000, grid_M=64, eps_end=0.01)


@pytest.fixture(scope="module")
def osc_report(osc):
    return compute_bounds(*osc, BoundSettings(**FAST), rng=0)


def test_oscillator_report(osc_report):
    r = osc_report
    assert r.ultimate.source == "closed-loop-lyapunov"
    assert 0 < r.delta.delta < 0.5
    assert r.omega > 0 and r.M > 1
    assert r.uniform is None and not r.symmetric
    d = r.to_dict()
    assert d["rate"]["rho"].startswith("1 - ")
    assert canonical_json(d) == canonical_json(r.to_dict())


def test_bound_functions(osc_report):
    b = osc_report.v_uniform_bound([3.0, 4.0], [0.0, 1.0])
    assert b[0] == osc_report.M * 6
    # omega is astronomically small here, so exp(-omega t) equals 1 at working precision
    assert b[1] <= b[0]
    neg = scaled_bound(osc_report, 10.0)([3.0, 4.0], [1.0])[0]
    assert neg <= b[1]
    with pytest.raises(BoundInputError):
        osc_report.uniform_bound([1.0])


def test_linear_curves_under_bound(osc, osc_report):
    curves = linear_tv_curves(*osc, scaled_bound(osc_report), [[2.0, 0.0]], [0.5, 2.0], rng=0, n_mc=20000)
    c = curves[0]
    assert c.verdict and np.all(c.tv_estimates <= 2.0 + 1e-9)
    assert c.tv_estimates[1] < c.tv_estimates[0]


def test_midpoint_policy(osc):
    r = compute_bounds(*osc, BoundSettings(rho_policy="midpoint", **FAST), rng=0)
    assert r.rates.best.theta == 0.5 and len(r.rates.table) == 1


def test_cubic_family():
    fam = cubic_family(2.0)
    np.testing.assert_allclose(fam(0.5)(np.array([[1.0]])), [[-1.5]])
