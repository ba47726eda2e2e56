import numpy as np
import pytest

from ergobound.bridge import (
    BridgeError,
    TimeGrid,
    bridge_marginal,
    build_bridge_kernel,
    kernel_identity_residual,
    sample_bridge_sde_path,
    sample_centered_bridge_path,
    scheme_moments,
    v_norm_profile,
    validate_marginals,
)
from ergobound.linop import LinearModel, ModelError

from oracles import BRIDGE_MEAN_1_0_HALF, QHAT_HALF, V_HALF


def test_time_grid():
    g = TimeGrid(M=10, eps_end=0.1)
    np.testing.assert_allclose(g.nodes, np.linspace(0, 1, 11), atol=1e-15)
    assert g.index_of(0.5) == 5
    with pytest.raises(ValueError):
        g.index_of(0.55)
    assert g.refined() == TimeGrid(20, 0.05)
    with pytest.raises(ValueError):
        TimeGrid(M=1)
    with pytest.raises(ValueError):
        TimeGrid(eps_end=0.5)
    fine = TimeGrid(M=512, eps_end=1e-3)
    assert fine.nodes[-2] == pytest.approx(0.999)
    assert np.all(fine.steps > 0)


def test_scalar1_half(s1):
    k = build_bridge_kernel(s1[0], TimeGrid(M=10, eps_end=0.1))
    i = k.grid.index_of(0.5)
    assert k.V[i, 0, 0] == pytest.approx(V_HALF, rel=1e-12)
    assert k.Qhat[i, 0, 0] == pytest.approx(QHAT_HALF, rel=1e-12)
    assert k.bridge_mean([1.0], [0.0])[i, 0] == pytest.approx(BRIDGE_MEAN_1_0_HALF, rel=1e-12)
    m, c = bridge_marginal(k, [1.0], [0.0], 0.5)
    assert m[0] == pytest.approx(BRIDGE_MEAN_1_0_HALF, rel=1e-12)
    assert c[0, 0] == pytest.approx(QHAT_HALF, rel=1e-12)


@pytest.mark.parametrize("name", ["s1", "osc"])
def test_kernel_structure(name, request):
    k = build_bridge_kernel(request.getfixturevalue(name)[0], TimeGrid(64, 0.01))
    d = k.model.d
    np.testing.assert_allclose(k.Qhat[0], 0, atol=1e-14)
    np.testing.assert_allclose(k.Qhat[-1], 0, atol=1e-10)
    np.testing.assert_allclose(k.J[-1], np.eye(d), atol=1e-8)
    assert kernel_identity_residual(k) < 1e-9
    assert not any(flag for _, _, flag in v_norm_profile(k))
    for q in k.Qhat:
        assert np.linalg.eigvalsh(q).min() > -1e-12
    x, y = np.ones(d), -np.ones(d)
    mean = k.bridge_mean(x, y)
    np.testing.assert_allclose(mean[0], x, atol=1e-14)
    np.testing.assert_allclose(mean[-1], y, atol=1e-8)


def test_bridge_mean_broadcasts(osc_kernel):
    xs = np.arange(6.0).reshape(3, 2)
    ys = -xs
    batch = osc_kernel.bridge_mean(xs, ys)
    for j in range(3):
        np.testing.assert_allclose(batch[j], osc_kernel.bridge_mean(xs[j], ys[j]))


def test_singular_noise_rejected():
    with pytest.raises(ModelError):
        build_bridge_kernel(LinearModel.from_matrices(-np.eye(2), Qhalf=np.diag([1.0, 0.0])))


def test_terminal_margin_conditioning(osc):
    with pytest.raises(BridgeError, match="eps_end"):
        build_bridge_kernel(osc[0], TimeGrid(M=8, eps_end=1e-6), cond_max=1e6)


def test_centered_paths_pinned(osc_kernel):
    path = sample_centered_bridge_path(osc_kernel, 3, n_paths=50)
    np.testing.assert_array_equal(path.states[:, 0], 0.0)
    np.testing.assert_array_equal(path.states[:, -1], 0.0)
    assert path.noise_increments is None


def test_sde_paths_pinned_and_noise(osc_kernel):
    x, y = np.array([1.0, -1.0]), np.array([0.5, 2.0])
    path = sample_bridge_sde_path(osc_kernel, x, y, 5, n_paths=20)
    np.testing.assert_allclose(path.states[:, 0], np.broadcast_to(x, (20, 2)))
    np.testing.assert_allclose(path.states[:, -1], np.broadcast_to(y, (20, 2)))
    assert path.noise_increments.shape == (20, osc_kernel.grid.M, 2)


def test_scheme_is_consistent(s1):
    """The theta-scheme's exact node moments converge to the bridge marginals."""
    errs = []
    for M in (64, 256):
        k = build_bridge_kernel(s1[0], TimeGrid(M, 1.0 / M))
        mean, cov = scheme_moments(k, [1.0], [-0.5])
        i = k.grid.index_of(0.5)
        m, c = bridge_marginal(k, [1.0], [-0.5], 0.5)
        errs.append(abs(mean[i, 0] - m[0]) + abs(cov[i, 0, 0] - c[0, 0]))
    assert errs[1] < errs[0] and errs[1] < 1e-3


def test_validate_marginals_small(s1_kernel):
    rows = validate_marginals(s1_kernel, [1.0], [0.0], n_paths=20_000, rng=1)
    assert {r["strategy"] for r in rows} == {"A", "B"}
    assert len(rows) == 2 * 3 * 2
    assert sum(r["pass"] for r in rows) >= len(rows) - 1


def test_sampler_determinism(osc_kernel):
    a = sample_centered_bridge_path(osc_kernel, 42, n_paths=5).states
    b = sample_centered_bridge_path(osc_kernel, 42, n_paths=5).states
    np.testing.assert_array_equal(a, b)
