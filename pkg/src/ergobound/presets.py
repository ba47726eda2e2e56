"""Named model/drift pairs used throughout tests, demos and configs."""
from __future__ import annotations

import numpy as np

from .drift import DriftSpec, linear_drift, zero_drift
from .linop import LinearModel


def scalar1(feedback: float = 0.0) -> tuple[LinearModel, DriftSpec]:
    """``dX = -X dt + c X dt + dW``.

    Against ``sign x``, ``-x + c(x + y)`` is at most ``-(1 - c)|x| + |c||y|``, so
    for ``c < 1`` the dissipativity constants are ``k1 = 1 - c, k2 = |c|, k3 = 0, s = 1``.
    """
    model = LinearModel.from_matrices([[-1.0]], Q=[[1.0]])
    c = float(feedback)
    base = zero_drift(1) if c == 0.0 else linear_drift([[c]])
    if c < 1.0:
        base = base.with_constants(k1=1.0 - c, k2=abs(c), k3=0.0, s=1.0)
    return model, base.with_constants(symmetric=True, name="scalar1")


def cubic_drift(a: float = 1.0, alpha: float = 0.0) -> DriftSpec:
    """``G(x) = -a x^3 + alpha x`` on R (with ``A = -1``).

    Growth: ``|G| <= (a + |alpha|)(1 + |x|^3)``. Against ``sign x``,
    ``-a(x+y)^3 <= -a|x|^3 + 3a x^2|y| + a|y|^3`` and Young's inequality gives
    ``3a x^2 |y| <= (a/2)|x|^3 + 16a|y|^3``; the linear part contributes
    ``(alpha - 1)|x| + |alpha||y| <= |alpha|(1 + |y|^3)`` when ``alpha <= 1``. Hence
    ``k1 = a/2, k2 = 17a + |alpha|, k3 = |alpha|, s = 3, eps = 2``.
    """
    def G(X):
        return -a * X**3 + alpha * X

    spec = DriftSpec(G, K=a + abs(alpha), m=3.0, symmetric=True, name=f"cubic(a={a:g},alpha={alpha:g})")
    if alpha <= 1.0:
        spec = spec.with_constants(k1=a / 2.0, k2=17.0 * a + abs(alpha), k3=abs(alpha), s=3.0, eps=2.0)
    return spec


def cubic(a: float = 1.0, alpha: float = 0.0) -> tuple[LinearModel, DriftSpec]:
    return scalar1()[0], cubic_drift(a, alpha)


def oscillator(alpha1: float = 1.0, alpha2: float = 1.0, sigma: float = 1.0) -> tuple[LinearModel, DriftSpec]:
    """``y'' = -alpha1 y - alpha2 y' + sigma w'`` as a first-order system on R^2.

    ``G(x) = (0, -(alpha1 x1 + alpha2 x2) / sigma)`` so that ``Q^{1/2} G`` is the
    damping force. The Euclidean norm is not a Lyapunov function here, so no
    dissipativity constants are attached; the closed-loop ultimate bound is used.
    """
    model = LinearModel.from_matrices([[0.0, 1.0], [0.0, 0.0]], Qhalf=np.diag([0.0, sigma]))
    L = np.array([[0.0, 0.0], [-alpha1 / sigma, -alpha2 / sigma]])
    return model, linear_drift(L).with_constants(name="oscillator")


def neumann_eigenvalues(d: int, shift: float) -> np.ndarray:
    k = np.arange(d)
    return -((k * np.pi) ** 2) - shift


def galerkin(d: int = 8, coeffs=(0.0, 0.0, 0.0, -1.0), shift: float = 1.0, n_quad: int | None = None) -> tuple[LinearModel, DriftSpec]:
    """Spectral truncation of ``u_t = u_xx - shift u + f(u) + noise`` with Neumann conditions.

    Coordinates are coefficients in the orthonormal cosine basis ``e_0 = 1``,
    ``e_k = sqrt(2) cos(k pi xi)``; ``f(u) = sum_i coeffs[i] u^i`` is applied at
    Gauss-Legendre collocation points and projected back. Since ``|e_k| <= sqrt 2``,
    ``sup|u| <= sqrt(2 d) |u|`` and ``|G(u)| <= sqrt(2 d) sup|f(u(xi))|``, which gives
    ``K = sqrt(2d) sum|c_i| max(1, (2d)^{m/2})``.
    """
    c = np.asarray(coeffs, dtype=float)
    m = float(max((i for i, a in enumerate(c) if a != 0.0), default=0))
    n_quad = n_quad or max(4 * d, 16)
    nodes, weights = np.polynomial.legendre.leggauss(n_quad)
    xi = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    k = np.arange(d)
    basis = np.where(k == 0, 1.0, np.sqrt(2.0))[None, :] * np.cos(np.pi * xi[:, None] * k[None, :])  # (q, d)

    def G(U):
        u = U @ basis.T
        return (np.polynomial.polynomial.polyval(u, c) * w) @ basis

    model = LinearModel.from_matrices(np.diag(neumann_eigenvalues(d, shift)), Q=np.eye(d))
    K = float(np.sqrt(2 * d) * np.abs(c).sum() * max(1.0, (2 * d) ** (m / 2)))
    symmetric = True
    return model, DriftSpec(G, K=K, m=m, symmetric=symmetric, name=f"galerkin(d={d})")


PRESETS = {
    "scalar1": scalar1,
    "cubic": cubic,
    "oscillator": oscillator,
    "galerkin": galerkin,
}


def preset(name: str, **params) -> tuple[LinearModel, DriftSpec]:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**params)
