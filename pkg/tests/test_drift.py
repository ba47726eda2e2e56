import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ergobound.drift import DriftSpec, check_dissipativity, closed_loop_model, linear_drift, polynomial_drift
from ergobound.linop import ModelError
from ergobound.presets import cubic_drift, galerkin, preset, scalar1


@pytest.mark.parametrize("name", ["scalar1", "cubic", "oscillator", "galerkin"])
def test_presets_satisfy_growth(name):
    model, drift = preset(name)
    drift.check_growth(model.d, rng=0)


@given(a=st.floats(0.1, 5.0), alpha=st.floats(-1.0, 1.0))
@settings(max_examples=25, deadline=None)
def test_cubic_constants_are_valid(a, alpha):
    model = scalar1()[0]
    drift = cubic_drift(a, alpha)
    drift.check_growth(1, rng=0)
    assert check_dissipativity(model, drift, rng=0, n=4000) <= 0


def test_dissipativity_violation_detected():
    model = scalar1()[0]
    bad = cubic_drift(1.0).with_constants(k1=5.0)
    with pytest.raises(ModelError, match="dissipativity"):
        check_dissipativity(model, bad, rng=0)
    with pytest.raises(ModelError):
        check_dissipativity(model, linear_drift([[1.0]]))


def test_growth_violation_detected():
    bad = DriftSpec(lambda X: X**3, K=1.0, m=2.0)
    with pytest.raises(ModelError, match="growth"):
        bad.check_growth(1, rng=0)
    with pytest.raises(ModelError):
        DriftSpec(lambda X: X, K=-1.0, m=1.0)


def test_polynomial_and_linear():
    p = polynomial_drift([1.0, 0.0, -2.0])
    np.testing.assert_allclose(p(np.array([[2.0]])), [[1.0 - 8.0]])
    assert (p.K, p.m) == (3.0, 2.0) and p.p == 4.0
    L = linear_drift([[0.0, 1.0], [-1.0, 0.0]])
    assert L.K == pytest.approx(1.0) and L.p == 2.0
    model = scalar1()[0]
    cl = closed_loop_model(model, linear_drift([[-1.0]]))
    assert cl.A[0, 0] == -2.0
    with pytest.raises(ModelError):
        closed_loop_model(model, cubic_drift())


def test_galerkin_projection_of_constant():
    """On a constant field u = c e_0, f(u) = -u^3 projects onto -c^3 e_0."""
    model, drift = galerkin(d=4)
    U = np.zeros((1, 4))
    U[0, 0] = 0.7
    np.testing.assert_allclose(drift(U), [[-0.343, 0, 0, 0]], atol=1e-12)
    assert model.d == 4 and drift.m == 3.0


def test_unknown_preset():
    with pytest.raises(KeyError):
        preset("lorenz")
