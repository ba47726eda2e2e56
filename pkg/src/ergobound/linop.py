"""Linear Ornstein-Uhlenbeck machinery.

Semigroups ``S_t = exp(tA)``, controllability Gramians
``Q_t = int_0^t S_s Q S_s^T ds``, regularity diagnostics, stationary
covariances, Gaussian moment bounds and the Cameron-Martin density of
``N(S_1 x, Q_1)`` against ``N(0, Q_1)``.

States live in R^d with the Euclidean norm.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma, pi, sqrt

import numpy as np
from scipy import integrate, linalg, stats

from .rng import as_stream, mean_and_stderr

PINV_RTOL = 1e-12
STABILITY_TOL = 1e-10


class ModelError(ValueError):
    """Raised when a model violates a structural precondition."""


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric square root of a symmetric psd matrix (negative round-off clipped)."""
    M = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(M)
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


@dataclass(frozen=True)
class LinearModel:
    """The pair ``(A, Q)`` of ``dZ = AZ dt + Q^{1/2} dW`` on R^d."""

    A: np.ndarray
    Q: np.ndarray
    Qhalf: np.ndarray

    @classmethod
    def from_matrices(cls, A, Q=None, Qhalf=None, tol: float = 1e-9) -> "LinearModel":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        d = A.shape[0]
        if A.shape != (d, d):
            raise ModelError(f"A must be square, got shape {A.shape}")
        if Q is None and Qhalf is None:
            raise ModelError("one of Q or Qhalf is required")
        if Qhalf is not None:
            Qhalf = np.atleast_2d(np.asarray(Qhalf, dtype=float))
            if Qhalf.shape != (d, d):
                raise ModelError(f"Qhalf must be {d}x{d}, got {Qhalf.shape}")
            if not np.allclose(Qhalf, Qhalf.T, atol=tol):
                raise ModelError("Qhalf must be symmetric")
            if np.linalg.eigvalsh(0.5 * (Qhalf + Qhalf.T)).min() < -tol:
                raise ModelError("Qhalf must be positive semidefinite")
            Qfromhalf = Qhalf @ Qhalf
            if Q is None:
                Q = Qfromhalf
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if Q.shape != (d, d):
            raise ModelError(f"Q must be {d}x{d}, got {Q.shape}")
        if not np.allclose(Q, Q.T, atol=tol):
            raise ModelError("Q must be symmetric")
        scale = max(1.0, float(np.abs(Q).max()))
        if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() < -tol * scale:
            raise ModelError("Q must be positive semidefinite")
        if Qhalf is None:
            Qhalf = psd_sqrt(Q)
        elif not np.allclose(Qhalf @ Qhalf, Q, atol=tol * scale):
            raise ModelError("Qhalf @ Qhalf does not reproduce Q")
        for arr in (A, Q, Qhalf):
            arr.setflags(write=False)
        return cls(A, 0.5 * (Q + Q.T), Qhalf)

    @property
    def d(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class Gramian:
    """``Q_t`` together with its spectral data and (pseudo-)roots."""

    t: float
    Qt: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    rank: int
    root: np.ndarray
    pinv_root: np.ndarray
    pinv: np.ndarray = field(repr=False)

    @classmethod
    def from_matrix(cls, t: float, Qt: np.ndarray, rtol: float = PINV_RTOL) -> "Gramian":
        Qt = 0.5 * (Qt + Qt.T)
        w, V = np.linalg.eigh(Qt)
        cutoff = rtol * max(float(w.max()), 0.0)
        keep = w > cutoff
        w_pos = np.where(keep, w, 0.0)
        root = (V * np.sqrt(w_pos)) @ V.T
        inv_sqrt = np.where(keep, 1.0 / np.sqrt(np.where(keep, w, 1.0)), 0.0)
        pinv_root = (V * inv_sqrt) @ V.T
        pinv = (V * inv_sqrt**2) @ V.T
        return cls(float(t), Qt, w, V, int(keep.sum()), root, pinv_root, pinv)

    @property
    def is_invertible(self) -> bool:
        return self.rank == self.Qt.shape[0]

    @property
    def condition(self) -> float:
        w = self.eigenvalues
        return float(w.max() / w.min()) if w.min() > 0 else float("inf")


@dataclass(frozen=True)
class RegularityReport:
    kalman_rank: int
    strong_feller: bool
    eps_ladder: tuple[float, ...] = ()
    hs_integral: tuple[float, ...] = ()
    converged: bool | None = None
    hs_limit: float | None = None


@dataclass(frozen=True)
class CertifiedValue:
    """An upper bound together with the estimate it was derived from."""

    value: float
    estimate: float
    stderr: float
    confidence: float | None
    method: str


def semigroup(model: LinearModel, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError("t must be nonnegative")
    return linalg.expm(t * model.A)


def gramian_matrix(model: LinearModel, t: float) -> np.ndarray:
    """Van Loan block exponential: ``expm([[-A, Q], [0, A^T]] t)``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    d = model.d
    C = np.zeros((2 * d, 2 * d))
    C[:d, :d] = -model.A
    C[:d, d:] = model.Q
    C[d:, d:] = model.A.T
    E = linalg.expm(C * t)
    Qt = E[d:, d:].T @ E[:d, d:]
    return 0.5 * (Qt + Qt.T)


def gramian_quadrature(model: LinearModel, t: float) -> np.ndarray:
    """Adaptive quadrature of ``S_s Q S_s^T``; independent cross-check of :func:`gramian_matrix`."""
    def integrand(s):
        S = linalg.expm(s * model.A)
        return S @ model.Q @ S.T

    val, _ = integrate.quad_vec(integrand, 0.0, t, epsabs=0.0, epsrel=1e-12)
    return 0.5 * (val + val.T)


def gramian(model: LinearModel, t: float) -> Gramian:
    return Gramian.from_matrix(t, gramian_matrix(model, t))


def phi1(model: LinearModel, h: float) -> np.ndarray:
    """``int_0^h S_u du``, valid for singular A (block exponential)."""
    d = model.d
    C = np.zeros((2 * d, 2 * d))
    C[:d, :d] = model.A
    C[:d, d:] = np.eye(d)
    return linalg.expm(C * h)[:d, d:]


def controllability_matrix(model: LinearModel, scaled: bool = False) -> np.ndarray:
    """``[Q^{1/2}, A Q^{1/2}, ..., A^{d-1} Q^{1/2}]``.

    With ``scaled=True`` block ``k`` is divided by ``||A||^k``; the column space is
    unchanged but stiff ``A`` no longer drowns the leading blocks in round-off.
    """
    a = float(np.linalg.norm(model.A, 2)) if scaled else 1.0
    a = a if a > 0 else 1.0
    blocks = [model.Qhalf]
    for _ in range(model.d - 1):
        blocks.append(model.A @ blocks[-1] / a)
    return np.hstack(blocks)


def kalman_strong_feller(model: LinearModel) -> RegularityReport:
    K = controllability_matrix(model, scaled=True)
    if not np.any(K):
        rank = 0
    else:
        rank = int(np.linalg.matrix_rank(K))
    return RegularityReport(kalman_rank=rank, strong_feller=rank == model.d)


def hs_integrand(model: LinearModel, t: float) -> float:
    """``||Q_t^{-1/2} S_t Q^{1/2}||_HS``; raises if ``Q_t`` is numerically singular."""
    G = gramian(model, t)
    if not G.is_invertible:
        raise ModelError(
            f"Q_t numerically singular at t={t:g} (rank {G.rank}/{model.d}, "
            f"eigenvalues {G.eigenvalues}); refine the epsilon ladder"
        )
    return float(np.linalg.norm(G.pinv_root @ semigroup(model, t) @ model.Qhalf, "fro"))


def hs_integrability_diagnostic(
    model: LinearModel,
    eps_ladder=(1e-1, 1e-2, 1e-3, 1e-4, 1e-5),
    rtol: float = 1e-2,
) -> RegularityReport:
    """Quadrature of the HS-norm integral on ``[eps, 1]`` for a decreasing ladder of ``eps``.

    Pieces between consecutive ladder points are integrated in ``log t`` so the
    ``t^{-1/2}``-type singularity at zero is resolved; cumulative sums are
    therefore nondecreasing by construction. ``converged`` compares the last two
    values after adding the tail estimate ``2 eps f(eps)``, whose extrapolation
    is reported as ``hs_limit``.
    """
    base = kalman_strong_feller(model)
    if not base.strong_feller:
        raise ModelError("Kalman rank deficient: Q_t is singular for all t")
    ladder = sorted((float(e) for e in eps_ladder), reverse=True)
    if ladder[0] >= 1.0 or ladder[-1] <= 0.0:
        raise ValueError("epsilon ladder must lie in (0, 1)")

    def piece(lo, hi):
        val, _ = integrate.quad(
            lambda u: hs_integrand(model, np.exp(u)) * np.exp(u),
            np.log(lo), np.log(hi), epsabs=1e-12, epsrel=1e-10, limit=200,
        )
        return val

    values = []
    total = 0.0
    upper = 1.0
    for eps in ladder:
        total += piece(eps, upper)
        values.append(total)
        upper = eps
    # The integrand is at most O(t^{-1/2}) at zero, so int_0^eps ~ 2 eps f(eps).
    extrap = [v + 2.0 * e * hs_integrand(model, e) for v, e in zip(values, ladder)]
    converged = len(values) > 1 and abs(extrap[-1] - extrap[-2]) <= rtol * abs(extrap[-1])
    return RegularityReport(
        kalman_rank=base.kalman_rank,
        strong_feller=True,
        eps_ladder=tuple(ladder),
        hs_integral=tuple(values),
        converged=bool(converged),
        hs_limit=float(extrap[-1]),
    )


def is_stable(A: np.ndarray, tol: float = STABILITY_TOL) -> bool:
    return bool(np.linalg.eigvals(A).real.max() < -tol)


def stationary_covariance(model: LinearModel) -> np.ndarray:
    """Solve ``A Q_inf + Q_inf A^T + Q = 0`` for Hurwitz ``A``."""
    if not is_stable(model.A):
        raise ModelError("A is not Hurwitz-stable; no stationary covariance")
    P = linalg.solve_continuous_lyapunov(model.A, -model.Q)
    return 0.5 * (P + P.T)


def gaussian_abs_moment_1d(sigma: float, p: float) -> float:
    """``E|N(0, sigma^2)|^p``."""
    return sigma**p * 2 ** (p / 2) * gamma((p + 1) / 2) / sqrt(pi)


def ou_moment_k(
    model: LinearModel,
    p: float,
    mc_budget: int = 200_000,
    rng=None,
    confidence: float = 0.99,
) -> CertifiedValue:
    """Upper bound on ``k(p) = sup_t E|Z_t|^p`` for the OU process from 0.

    ``Q_t`` increases to ``Q_inf`` in Loewner order and ``|.|^p`` is convex, so the
    supremum is ``E|N(0, Q_inf)|^p``. ``p = 2`` is exact (trace); other ``p``
    use a one-sided Monte-Carlo upper confidence bound.
    """
    if p <= 0:
        raise ValueError("p must be positive")
    Qinf = stationary_covariance(model)
    if np.allclose(Qinf, 0.0):
        return CertifiedValue(0.0, 0.0, 0.0, None, "degenerate")
    if p == 2:
        tr = float(np.trace(Qinf))
        return CertifiedValue(tr, tr, 0.0, None, "exact-trace")
    gen = as_stream(rng).spawn("ou_moment_k", float(p)).generator()
    L = psd_sqrt(Qinf)
    samples = gen.standard_normal((mc_budget, model.d)) @ L.T
    vals = np.linalg.norm(samples, axis=1) ** p
    est, se = mean_and_stderr(vals)
    z = stats.norm.ppf(confidence)
    return CertifiedValue(est + z * se, est, se, confidence, "mc-ucb")


def cameron_martin_log_g(model: LinearModel, x, y, S1=None, G1: Gramian | None = None) -> np.ndarray:
    """``log d N(S_1 x, Q_1) / d N(0, Q_1)`` at ``y``; broadcasts over leading axes."""
    if S1 is None:
        S1 = semigroup(model, 1.0)
    if G1 is None:
        G1 = gramian(model, 1.0)
    if not G1.is_invertible:
        raise ModelError("Q_1 is singular; the Cameron-Martin density does not exist")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m = x @ S1.T
    w = m @ G1.pinv
    return np.sum(w * y, axis=-1) - 0.5 * np.sum(w * m, axis=-1)


def cameron_martin_g(model: LinearModel, x, y) -> float | np.ndarray:
    out = np.exp(cameron_martin_log_g(model, x, y))
    return float(out) if np.ndim(out) == 0 else out


def gaussian_logpdf(y, mean, cov) -> np.ndarray:
    """Log-density of ``N(mean, cov)`` with full-rank ``cov``; broadcasts over leading axes."""
    y = np.asarray(y, dtype=float)
    diff = y - np.asarray(mean, dtype=float)
    c, low = linalg.cho_factor(cov, lower=True)
    d = cov.shape[0]
    sol = linalg.cho_solve((c, low), diff.reshape(-1, d).T).T.reshape(diff.shape)
    logdet = 2.0 * np.sum(np.log(np.diag(c)))
    return -0.5 * (np.sum(diff * sol, axis=-1) + logdet + d * np.log(2 * np.pi))
