"""Computable ergodicity constants.

From an ultimate bound ``E_x|X_t| <= k0 e^{-k1 t}|x| + c`` and a minorisation
mass ``delta`` the Meyn-Tweedie construction yields a V-uniform rate
``omega = -log(rho)/T`` with prefactor ``M`` for ``V(x) = |x| + 1``; a
superlinear drift additionally gives the uniform rate
``omega_hat = -1/2 log(1 - delta)`` and spectral-gap bounds ``omega_hat / p``.

``delta`` is usually far below double precision, so all rate arithmetic is done
in mpmath. The admissible ``rho`` interval ``(1 - 1/M_c, 1)`` is parametrised as
``rho = 1 - theta / M_c`` with ``theta in (0, 1)``, which keeps
``rho + 1/M_c - 1 = (1 - theta)/M_c`` exact even when ``1/M_c`` is below the
working precision.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import mpmath as mp
import numpy as np
from scipy import linalg

from .drift import DriftSpec, closed_loop_model
from .linop import LinearModel, ModelError, stationary_covariance

WORK_DPS = 40


class BoundInputError(ValueError):
    pass


@dataclass(frozen=True)
class UltimateBound:
    """Constants of ``E_x|X_t| <= k0 exp(-k1 t)|x| + c_hat``."""

    k0: float
    k1: float
    c_hat: float
    source: str = "given"

    def __post_init__(self):
        if self.k0 < 1.0 or self.k1 <= 0.0 or self.c_hat < 0.0:
            raise BoundInputError(f"need k0 >= 1, k1 > 0, c_hat >= 0; got {self.k0}, {self.k1}, {self.c_hat}")


def _k(k_moments, p: float) -> float:
    v = k_moments(p) if callable(k_moments) else k_moments[float(p)]
    return float(getattr(v, "value", v))


def linear_growth_constants(drift: DriftSpec) -> tuple[float, float, float, float]:
    """Dissipativity constants in the linear form ``-k1|x| + k2|y|^s + k3``.

    The superlinear form ``-k1|x|^{1+eps}`` implies the linear one with ``k3 + k1``,
    because ``|x|^{1+eps} >= |x| - 1``.
    """
    if not drift.has_dissipativity:
        raise BoundInputError("drift lacks dissipativity constants k1, k2, k3, s")
    k3 = drift.k3 + drift.k1 if drift.eps is not None else drift.k3
    return drift.k1, drift.k2, k3, drift.s


def ultimate_bound_from_growth(drift: DriftSpec, k_moments) -> UltimateBound:
    """``k0 = 1``, ``k1`` from the drift, ``c_hat = (k2 k(s) + k3)/k1 + k(1)``.

    ``k_moments`` maps ``p`` to (an upper bound on) ``k(p) = sup_t E|Z_t|^p``; it
    may be a dict or a callable, values may be :class:`CertifiedValue`.
    """
    k1, k2, k3, s = linear_growth_constants(drift)
    ks = _k(k_moments, s) if k2 != 0.0 else 0.0
    c_hat = (k2 * ks + k3) / k1 + _k(k_moments, 1.0)
    return UltimateBound(1.0, k1, c_hat, "growth")


def closed_loop_ultimate_bound(model: LinearModel, drift: DriftSpec) -> UltimateBound:
    """Ultimate bound for a linear drift ``G = Lx`` from a Lyapunov certificate.

    With ``Acl = A + Q^{1/2} L`` Hurwitz and ``Acl^T P + P Acl = -I``,
    ``|e^{t Acl} x| <= sqrt(cond P) e^{-t / (2 lambda_max P)} |x|``, and the noise
    part satisfies ``E|Z_t| <= sqrt(tr Q_t) <= sqrt(tr Q_inf)``.
    """
    cl = closed_loop_model(model, drift)
    A = cl.A
    P = linalg.solve_continuous_lyapunov(A.T, -np.eye(model.d))
    P = 0.5 * (P + P.T)
    w = np.linalg.eigvalsh(P)
    if w.min() <= 0:
        raise ModelError("closed-loop drift is not Hurwitz")
    k0 = float(np.sqrt(w.max() / w.min()))
    k1 = float(1.0 / (2.0 * w.max()))
    c_hat = float(np.sqrt(np.trace(stationary_covariance(cl))))
    return UltimateBound(max(k0, 1.0), k1, c_hat, "closed-loop-lyapunov")


def mhat(drift: DriftSpec, k_moments) -> float:
    """``M_hat = k(1) + max((2(k2 k(s) + k3)/k1)^{1+eps}, (1/(k1 eps) + 2)^{1/eps})``."""
    if drift.eps is None:
        raise BoundInputError("superlinearity exponent eps is required")
    if not drift.has_dissipativity:
        raise BoundInputError("drift lacks dissipativity constants k1, k2, k3, s")
    k1, k2, k3, s, eps = drift.k1, drift.k2, drift.k3, drift.s, drift.eps
    ks = _k(k_moments, s) if k2 != 0.0 else 0.0
    first = (2.0 * (k2 * ks + k3) / k1) ** (1.0 + eps)
    second = (1.0 / (k1 * eps) + 2.0) ** (1.0 / eps)
    return _k(k_moments, 1.0) + max(first, second)


@dataclass(frozen=True)
class SmallSetConfig:
    R: float
    r: float
    t0: float
    T: float
    b: float
    notes: tuple[str, ...] = ()


def small_set_config(ub: UltimateBound, R: float, r: float) -> SmallSetConfig:
    c, k0, k1 = ub.c_hat, ub.k0, ub.k1
    if not R > 4.0 * c:
        raise BoundInputError(f"need R > 4 c_hat = {4 * c:.6g}, got R = {R}")
    if not r > 4.0 * (c + 0.5):
        raise BoundInputError(f"need r > 4 (c_hat + 1/2) = {4 * (c + 0.5):.6g}, got r = {r}")
    arg = R / (2.0 * r * k0) - c / (r * k0)
    notes = []
    if arg <= 0.0:
        raise BoundInputError(f"log argument {arg:.3g} <= 0: need R > 2 c_hat = {2 * c:.6g}")
    if arg >= 1.0:
        t0 = 0.0
        notes.append(f"t0 clamped to 0 (log argument {arg:.4g} >= 1; R >= 2 r k0 + 2 c_hat)")
    else:
        t0 = -np.log(arg) / k1
    T = max(t0 + 1.0, -np.log(1.0 / (4.0 * k0)) / k1)
    return SmallSetConfig(float(R), float(r), float(t0), float(T), c + 0.5, tuple(notes))


def default_radii(ub: UltimateBound, margin: float = 1.25) -> tuple[float, float]:
    """``R = margin * 4 c_hat`` and ``r = margin * 4 (c_hat + 1/2)``."""
    return margin * max(4.0 * ub.c_hat, 1e-12), margin * 4.0 * (ub.c_hat + 0.5)


@dataclass(frozen=True)
class MTConstants:
    delta: mp.mpf
    b: mp.mpf
    v: mp.mpf
    gamma_c: mp.mpf
    lambda_hat: mp.mpf
    one_minus_lambda: mp.mpf
    b_hat: mp.mpf
    xi_bar: mp.mpf
    M_c: mp.mpf


def mt_constants(delta, b, v) -> MTConstants:
    """Meyn-Tweedie constants for minorisation mass ``delta``, drift constant ``b``, ``v = r + 1``."""
    with mp.workdps(WORK_DPS):
        delta, b, v = mp.mpf(delta), mp.mpf(b), mp.mpf(v)
        if not (0 < delta < 1):
            raise BoundInputError(f"delta must lie in (0, 1), got {mp.nstr(delta, 6)}")
        if b <= 0 or v < 1:
            raise BoundInputError("need b > 0 and v >= 1")
        gamma_c = (4 * b + delta * v) / delta**2
        lam = (mp.mpf(1) / 2 + gamma_c) / (1 + gamma_c)
        oml = (mp.mpf(1) / 2) / (1 + gamma_c)
        b_hat = v + gamma_c
        xi = (4 - delta**2) / delta**5 * 4 * b**2
        M_c = (oml + b_hat + b_hat**2 + xi * (b_hat * oml + b_hat**2)) / oml**2
        return MTConstants(+delta, +b, +v, +gamma_c, +lam, +oml, +b_hat, +xi, +M_c)


@dataclass(frozen=True)
class RateRow:
    theta: float
    rho: mp.mpf
    one_minus_rho: mp.mpf
    omega: mp.mpf
    M: mp.mpf


def rate_row(theta: float, mt: MTConstants, T: float, ub: UltimateBound) -> RateRow:
    """``omega = -log(rho)/T`` and ``M = (1+gamma_c) rho/(rho + 1/M_c - 1) (c + k0 + 1) / rho``."""
    if not 0.0 < theta < 1.0:
        raise BoundInputError("theta must lie in (0, 1)")
    with mp.workdps(WORK_DPS):
        th = mp.mpf(theta)
        eps = th / mt.M_c
        rho = 1 - eps
        omega = -mp.log1p(-eps) / T
        gap = (1 - th) / mt.M_c  # rho + 1/M_c - 1
        M = (1 + mt.gamma_c) * rho / gap * (mp.mpf(ub.c_hat) + ub.k0 + 1) / rho
        return RateRow(float(theta), +rho, +eps, +omega, +M)


@dataclass
class RateReport:
    best: RateRow
    table: list
    M_cap: float | None


def rate_report(cfg: SmallSetConfig, mt: MTConstants, ub: UltimateBound, theta_grid=None, M_cap=None) -> RateReport:
    """Sweep ``rho = 1 - theta/M_c`` and pick the largest ``omega`` with ``M <= M_cap``."""
    if theta_grid is None:
        theta_grid = np.round(np.linspace(0.05, 0.95, 19), 10)
    table = [rate_row(float(th), mt, cfg.T, ub) for th in theta_grid if 0.0 < th < 1.0]
    if not table:
        raise BoundInputError("empty admissible rho grid")
    ok = [row for row in table if M_cap is None or row.M <= mp.mpf(M_cap)]
    if not ok:
        raise BoundInputError(f"no rho in the grid gives M <= {M_cap}; smallest M is {mp.nstr(min(r.M for r in table), 6)}")
    best = max(ok, key=lambda row: row.omega)
    return RateReport(best, table, M_cap)


def uniform_rate(delta) -> tuple[mp.mpf, mp.mpf]:
    """``omega_hat = -1/2 log(1 - delta)`` and the prefactor ``1/(1 - delta)``."""
    with mp.workdps(WORK_DPS):
        delta = mp.mpf(delta)
        if not (0 <= delta < 1):
            raise BoundInputError("delta must lie in [0, 1)")
        return +(-mp.log1p(-delta) / 2), +(1 / (1 - delta))


def spectral_gap(omega_hat, omega=None, p: float = 2.0, symmetric: bool = False) -> dict:
    """Spectral-gap lower bounds in ``L^p(mu*)``.

    ``omega_hat / p`` for ``p > 1`` (and ``p = 1`` only for symmetric semigroups);
    for symmetric semigroups and ``p = 2`` the V-uniform rate ``omega`` is also a
    bound on the L2 decay rate.
    """
    if p < 1:
        raise BoundInputError("p must be >= 1")
    if p == 1 and not symmetric:
        raise BoundInputError("the L^1 gap bound requires a symmetric semigroup")
    out = {"omega_hat_over_p": mp.mpf(omega_hat) / p if omega_hat is not None else None}
    if symmetric and p == 2 and omega is not None:
        out["l2_symmetric"] = mp.mpf(omega)
    return out


def symmetry_check(model: LinearModel, drift: DriftSpec, rng=None, n_points: int = 64, h: float = 1e-5, rtol: float = 1e-5) -> dict:
    """Numerical sanity check of a symmetry claim.

    Requires ``A`` symmetric, ``Q = qI``, and a curl-free ``G``: for random states
    and random 2-planes ``(u, v)`` the Jacobian is symmetric,
    ``<DG u, v> = <DG v, u>`` (central differences).
    """
    from .rng import as_stream

    d = model.d
    A_sym = bool(np.allclose(model.A, model.A.T, atol=1e-12))
    q = model.Q[0, 0]
    Q_iso = bool(np.allclose(model.Q, q * np.eye(d), atol=1e-12)) and q > 0
    gen = as_stream(rng).spawn("symmetry").generator()
    X = gen.standard_normal((n_points, d))
    U = gen.standard_normal((n_points, d))
    V = gen.standard_normal((n_points, d))

    def jvp(X, W):
        return (drift(X + h * W) - drift(X - h * W)) / (2 * h)

    a = np.einsum("nd,nd->n", jvp(X, U), V)
    b = np.einsum("nd,nd->n", jvp(X, V), U)
    scale = np.maximum(1.0, np.abs(a) + np.abs(b))
    curl_free = bool(np.all(np.abs(a - b) <= rtol * scale)) if d > 1 else True
    return {"A_symmetric": A_sym, "Q_isotropic": Q_iso, "curl_free": curl_free,
            "consistent": A_sym and Q_iso and curl_free}
