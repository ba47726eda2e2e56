"""Nonlinear drift specifications ``F = Q^{1/2} G`` and their growth constants."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .linop import LinearModel, ModelError
from .rng import as_stream


@dataclass(frozen=True)
class DriftSpec:
    """A vectorised map ``G: (n, d) -> (n, d)`` with the constants the bounds use.

    ``K, m`` bound the growth, ``|G(x)| <= K (1 + |x|^m)``. The optional
    ``k1, k2, k3, s`` are dissipativity constants of the part ``Ax + F(x + y)``;
    if ``eps`` is set they are read in the superlinear form
    ``<Ax + F(x+y), x/|x|> <= -k1 |x|^{1+eps} + k2 |y|^s + k3``.
    ``linear`` optionally records a matrix ``L`` with ``G(x) = L x``.
    """

    G: Callable[[np.ndarray], np.ndarray]
    K: float
    m: float
    k1: float | None = None
    k2: float | None = None
    k3: float | None = None
    s: float | None = None
    eps: float | None = None
    symmetric: bool = False
    name: str = "custom"
    linear: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.K < 0 or self.m < 0:
            raise ModelError("growth constants K, m must be nonnegative")

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.G(X)

    @property
    def has_dissipativity(self) -> bool:
        return None not in (self.k1, self.k2, self.k3, self.s)

    @property
    def p(self) -> float:
        """Exponent of the density lower bound, ``max(2, 2m)``."""
        return max(2.0, 2.0 * self.m)

    def growth_bound(self, X: np.ndarray) -> np.ndarray:
        return self.K * (1.0 + np.linalg.norm(X, axis=-1) ** self.m)

    def check_growth(self, d: int, rng=None, n: int = 4000, rtol: float = 1e-9) -> None:
        """Spot-check ``|G(x)| <= K(1 + |x|^m)`` on random states at radii 1e-3..1e3."""
        gen = as_stream(rng).spawn("growth-check").generator()
        U = gen.standard_normal((n, d))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        radii = 10.0 ** gen.uniform(-3.0, 3.0, size=n)
        X = np.vstack([np.zeros((1, d)), U * radii[:, None]])
        val = self.G(X)
        if val.shape != X.shape:
            raise ModelError(f"drift must map (n, {d}) to (n, {d}); got {val.shape}")
        nrm = np.linalg.norm(val, axis=1)
        if not np.all(np.isfinite(nrm)):
            raise ModelError("drift returned non-finite values")
        excess = nrm - self.growth_bound(X) * (1 + rtol)
        if np.any(excess > 0):
            i = int(np.argmax(excess))
            raise ModelError(
                f"growth bound |G(x)| <= K(1+|x|^m) violated at |x|={np.linalg.norm(X[i]):.4g}: "
                f"|G|={nrm[i]:.6g} > {self.growth_bound(X[i:i + 1])[0]:.6g}"
            )

    def with_constants(self, **kw) -> "DriftSpec":
        from dataclasses import replace

        return replace(self, **kw)


def check_dissipativity(model, drift: DriftSpec, rng=None, n: int = 20_000, rtol: float = 1e-9) -> float:
    """Spot-check the declared dissipativity inequality on random ``(x, y)``.

    Evaluates ``<Ax + Q^{1/2} G(x + y), x/|x|> + k1 |x|^{1+eps} - k2 |y|^s - k3``
    (``eps = 0`` in the linear form) for radii spread over ``1e-2 .. 1e2``;
    returns the largest value, raising :class:`ModelError` if it is positive.
    """
    if not drift.has_dissipativity:
        raise ModelError("drift carries no dissipativity constants")
    d = model.d
    gen = as_stream(rng).spawn("dissipativity-check").generator()

    def cloud():
        U = gen.standard_normal((n, d))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        return U * (10.0 ** gen.uniform(-2.0, 2.0, size=n))[:, None]

    X, Y = cloud(), cloud()
    Y[: n // 4] = 0.0
    nx = np.linalg.norm(X, axis=1)
    ny = np.linalg.norm(Y, axis=1)
    lhs = np.einsum("nd,nd->n", X @ model.A.T + drift(X + Y) @ model.Qhalf.T, X) / nx
    e = drift.eps or 0.0
    rhs = -drift.k1 * nx ** (1.0 + e) + drift.k2 * ny**drift.s + drift.k3
    excess = lhs - rhs - rtol * (np.abs(lhs) + np.abs(rhs))
    worst = int(np.argmax(excess))
    if excess[worst] > 0:
        raise ModelError(
            f"dissipativity inequality violated at |x|={nx[worst]:.4g}, |y|={ny[worst]:.4g} "
            f"(excess {excess[worst]:.4g})"
        )
    return float((lhs - rhs).max())


def zero_drift(d: int) -> DriftSpec:
    return DriftSpec(lambda X: np.zeros_like(X), K=0.0, m=0.0, name="zero", linear=np.zeros((d, d)))


def constant_drift(c) -> DriftSpec:
    c = np.asarray(c, dtype=float)
    return DriftSpec(lambda X: np.broadcast_to(c, X.shape).copy(), K=float(np.linalg.norm(c)), m=0.0, name="constant")


def linear_drift(L, **constants) -> DriftSpec:
    """``G(x) = L x``; growth ``|Lx| <= ||L|| (1 + |x|)``."""
    L = np.atleast_2d(np.asarray(L, dtype=float))
    K = float(np.linalg.norm(L, 2))
    return DriftSpec(lambda X: X @ L.T, K=K, m=1.0, name="linear", linear=L, **constants)


def polynomial_drift(coeffs, d: int = 1, **constants) -> DriftSpec:
    """Coordinatewise polynomial ``G(x)_i = sum_k c_k x_i^k`` (``coeffs[k] = c_k``).

    Since ``|x_i|^k <= 1 + |x|^m`` for ``k <= m``, each coordinate is bounded by
    ``sum|c_k| (1 + |x|^m)`` and ``K = sqrt(d) sum|c_k|``.
    """
    c = np.asarray(coeffs, dtype=float)
    m = float(max((k for k, a in enumerate(c) if a != 0.0), default=0))

    def G(X):
        return np.polynomial.polynomial.polyval(X, c)

    constants.setdefault("name", "polynomial")
    return DriftSpec(G, K=float(np.abs(c).sum() * np.sqrt(d)), m=m, **constants)


def closed_loop_model(model: LinearModel, drift: DriftSpec) -> LinearModel:
    """For linear ``G = L x`` the SDE is OU with drift matrix ``A + Q^{1/2} L``."""
    if drift.linear is None:
        raise ModelError("drift is not linear")
    return LinearModel.from_matrices(model.A + model.Qhalf @ drift.linear, Q=model.Q, Qhalf=model.Qhalf)
