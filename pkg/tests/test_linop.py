import numpy as np
import pytest
from scipy import stats

from ergobound.linop import (
    LinearModel,
    ModelError,
    cameron_martin_g,
    gaussian_logpdf,
    gramian,
    gramian_matrix,
    gramian_quadrature,
    hs_integrability_diagnostic,
    kalman_strong_feller,
    ou_moment_k,
    psd_sqrt,
    semigroup,
    stationary_covariance,
)

from oracles import G_1_0, Q1, S1


def test_semigroup_examples(s1, osc):
    np.testing.assert_array_equal(semigroup(LinearModel.from_matrices(np.zeros((2, 2)), Q=np.eye(2)), 5.0), np.eye(2))
    t = 0.8
    np.testing.assert_allclose(semigroup(osc[0], t), [[1.0, t], [0.0, 1.0]], atol=1e-14)
    assert semigroup(s1[0], 1.0)[0, 0] == pytest.approx(S1, rel=1e-14)


@pytest.mark.parametrize("name", ["s1", "osc"])
def test_semigroup_property(name, request):
    model = request.getfixturevalue(name)[0]
    grid = np.linspace(0, 2, 7)
    for s in grid:
        for t in grid:
            assert np.abs(semigroup(model, s + t) - semigroup(model, s) @ semigroup(model, t)).max() < 1e-10


def test_gramian_closed_forms(s1, osc):
    m0 = LinearModel.from_matrices(np.zeros((3, 3)), Q=np.eye(3))
    np.testing.assert_allclose(gramian(m0, 2.5).Qt, 2.5 * np.eye(3), rtol=1e-12)
    assert gramian(s1[0], 1.0).Qt[0, 0] == pytest.approx(Q1, rel=1e-12)
    for t in (0.1, 0.7, 1.0, 3.0):
        oracle = np.array([[t**3 / 3, t**2 / 2], [t**2 / 2, t]])
        np.testing.assert_allclose(gramian(osc[0], t).Qt, oracle, rtol=1e-10, atol=1e-15)


@pytest.mark.parametrize("name", ["s1", "osc", "cub"])
def test_gramian_methods_agree(name, request):
    model = request.getfixturevalue(name)[0]
    for t in (0.05, 0.5, 1.0):
        a, b = gramian_matrix(model, t), gramian_quadrature(model, t)
        assert np.linalg.norm(a - b) <= 1e-9 * np.linalg.norm(a)


def test_gramian_monotone_and_splitting(osc):
    model = osc[0]
    ts = np.linspace(0.05, 1.0, 12)
    for s, t in zip(ts[:-1], ts[1:]):
        assert np.linalg.eigvalsh(gramian(model, t).Qt - gramian(model, s).Qt).min() >= -1e-10
    Q1m = gramian(model, 1.0).Qt
    for t in np.arange(0.1, 1.0, 0.1):
        Sr = semigroup(model, 1 - t)
        resid = Q1m - gramian(model, 1 - t).Qt - Sr @ gramian(model, t).Qt @ Sr.T
        assert np.abs(resid).max() < 1e-8


def test_gramian_object_invariants(osc):
    G = gramian(osc[0], 0.3)
    np.testing.assert_allclose(G.root @ G.root, G.Qt, atol=1e-13)
    P = G.pinv_root @ G.root
    np.testing.assert_allclose(P, np.eye(2), atol=1e-8)
    degenerate = gramian(LinearModel.from_matrices(np.zeros((2, 2)), Qhalf=np.diag([1.0, 0.0])), 1.0)
    P = degenerate.pinv_root @ degenerate.root
    np.testing.assert_allclose(P, np.diag([1.0, 0.0]), atol=1e-12)


def test_kalman(s1, osc):
    assert kalman_strong_feller(osc[0]).kalman_rank == 2
    assert kalman_strong_feller(osc[0]).strong_feller
    r = kalman_strong_feller(LinearModel.from_matrices(-np.eye(2), Q=np.zeros((2, 2))))
    assert (r.kalman_rank, r.strong_feller) == (0, False)
    assert kalman_strong_feller(s1[0]).kalman_rank == 1


def test_kalman_stiff_diagonal():
    # A^k Q^{1/2} spans ~20 orders of magnitude here; the rank must still be full.
    A = np.diag(-((np.arange(8) * np.pi) ** 2) - 1.0)
    assert kalman_strong_feller(LinearModel.from_matrices(A, Q=np.eye(8))).kalman_rank == 8


def test_hs_integral_closed_form():
    model = LinearModel.from_matrices([[0.0]], Q=[[1.0]])
    ladder = (1e-1, 1e-2, 1e-3, 1e-4)
    rep = hs_integrability_diagnostic(model, ladder)
    np.testing.assert_allclose(rep.hs_integral, [2 * (1 - np.sqrt(e)) for e in ladder], rtol=1e-8)
    assert rep.converged
    assert rep.hs_limit == pytest.approx(2.0, rel=1e-8)


@pytest.mark.parametrize("name", ["s1", "osc"])
def test_hs_integral_finite_and_monotone(name, request):
    rep = hs_integrability_diagnostic(request.getfixturevalue(name)[0])
    assert rep.converged and np.isfinite(rep.hs_integral[-1])
    assert np.all(np.diff(rep.hs_integral) >= 0)


def test_hs_requires_strong_feller():
    with pytest.raises(ModelError):
        hs_integrability_diagnostic(LinearModel.from_matrices(-np.eye(2), Qhalf=np.diag([1.0, 0.0])))


def test_stationary_covariance(s1, osc):
    assert stationary_covariance(s1[0])[0, 0] == pytest.approx(0.5)
    np.testing.assert_allclose(stationary_covariance(LinearModel.from_matrices(-np.eye(3), Q=np.eye(3))), 0.5 * np.eye(3))
    with pytest.raises(ModelError):
        stationary_covariance(osc[0])


def test_ou_moment_k(s1):
    assert ou_moment_k(s1[0], 2).value == 0.5
    k4 = ou_moment_k(s1[0], 4, mc_budget=200_000, rng=11)
    assert abs(k4.estimate - 0.75) < 3 * k4.stderr
    assert k4.value >= k4.estimate and k4.confidence == 0.99
    zero = LinearModel.from_matrices([[-1.0]], Q=[[0.0]])
    assert ou_moment_k(zero, 3).value == 0.0
    with pytest.raises(ModelError):
        ou_moment_k(LinearModel.from_matrices([[0.0]], Q=[[1.0]]), 1)


def test_cameron_martin(s1, osc):
    assert cameron_martin_g(osc[0], np.zeros(2), np.array([0.3, -2.0])) == pytest.approx(1.0)
    assert cameron_martin_g(s1[0], [1.0], [0.0]) == pytest.approx(G_1_0, rel=1e-12)
    for model in (s1[0], osc[0]):
        d = model.d
        rng = np.random.default_rng(0)
        for _ in range(5):
            x, y = rng.normal(size=d), rng.normal(size=d)
            G1 = gramian(model, 1.0).Qt
            lhs = cameron_martin_g(model, x, y) * np.exp(gaussian_logpdf(y, np.zeros(d), G1))
            rhs = stats.multivariate_normal(semigroup(model, 1.0) @ x, G1).pdf(y)
            assert lhs == pytest.approx(rhs, rel=1e-10)


def test_model_validation():
    with pytest.raises(ModelError):
        LinearModel.from_matrices([[1.0, 0.0]], Q=[[1.0]])
    with pytest.raises(ModelError):
        LinearModel.from_matrices([[-1.0]], Q=[[-1.0]])
    with pytest.raises(ModelError):
        LinearModel.from_matrices([[-1.0]])
    m = LinearModel.from_matrices([[-1.0, 0.0], [0.0, -2.0]], Q=[[2.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(m.Qhalf @ m.Qhalf, m.Q, atol=1e-12)
    np.testing.assert_allclose(psd_sqrt(np.diag([4.0, 0.0])), np.diag([2.0, 0.0]))
