"""Explicit lower bounds on transition densities and the small-set constant.

For the bridge ``Zb = (S_t - J_t S_1) x + J_t y + Zc`` the sup-norm moments are
certified as ``E sup|Zb|^n <= L(n) (1 + |x|^n + U(y)^n)``; together with the
growth constants ``K, m`` of the drift they give a minorant of
``log dP(1, x, .)/d mu_1 (y)`` that is evaluable at every ``(x, y)``. The
Young-split form ``b1 exp(-b2 |x|^p - b3 |y|^p)`` with ``p = max(2, 2m)`` is
derived from it, and ``delta = 1/2 E_{mu_1}[1_{|y|<r} inf_{|x|<=R} l(x, y)]``
(lower confidence bound) gives the minorisation constant.

Bounds that come from Monte Carlo are one-sided confidence bounds; every
result records the confidence level it holds at.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from math import ceil

import mpmath as mp
import numpy as np
from scipy import integrate, stats

from .bridge import BridgeKernel, sample_centered_bridge_path
from .drift import DriftSpec
from .linop import CertifiedValue, ModelError, gramian, semigroup
from .rng import DEFAULT_BATCH, as_stream, map_batches

DEFAULT_ETA = 0.05
COND_LIMIT = 1e8


class BoundVerificationError(AssertionError):
    pass


# --- y functionals ---------------------------------------------------------------

def y_functionals(kernel: BridgeKernel, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``U(y) = max_t |J_t y|``, ``U1(y) = sum |B3(t_i) y| dt_i``, ``U2(y) = |S_1^T Q_1^{-1} y|``.

    ``y`` may carry leading batch axes.
    """
    y = np.asarray(y, dtype=float)
    U = np.linalg.norm(np.einsum("tij,...j->...ti", kernel.J, y), axis=-1).max(axis=-1)
    U1 = np.einsum("...t,t->...", np.linalg.norm(np.einsum("tij,...j->...ti", kernel.B3, y), axis=-1), kernel.dt)
    U2 = np.linalg.norm(y @ (kernel.S1.T @ kernel.G1.pinv).T, axis=-1)
    return U, U1, U2


def u1_certified(kernel: BridgeKernel, y) -> np.ndarray:
    """Exact upper bound ``|Q_1^{-1/2} y| >= int_0^1 |B3(s) y| ds`` (Cauchy-Schwarz)."""
    return np.linalg.norm(np.asarray(y, float) @ kernel.G1.pinv_root.T, axis=-1)


# --- moment constants --------------------------------------------------------------

@dataclass(frozen=True)
class MomentReport:
    L_table: dict
    c_B1: float
    c_B1_sq: float
    u_sup_moments: dict
    det_norm: float
    confidence: float
    n_paths: int


def _b1_qhat_trace(model, s: float, S1, G1) -> float:
    tau = 1.0 - s
    Srev = semigroup(model, tau)
    Gt = gramian(model, s)
    Grev = gramian(model, tau)
    J = Gt.Qt @ Srev.T @ G1.pinv
    Qhat = Gt.Qt - J @ Srev @ Gt.Qt
    B1 = model.Qhalf @ Srev.T @ Grev.pinv @ Srev
    return float(max(np.trace(B1 @ (0.5 * (Qhat + Qhat.T)) @ B1.T), 0.0))


def _tau_floor(model, limit: float = COND_LIMIT) -> float:
    """Smallest ``tau`` (on a log ladder) at which ``Q_tau`` has condition number <= limit."""
    tau = 1e-2
    while tau > 1e-10:
        nxt = tau / 2
        if gramian(model, nxt).condition > limit:
            break
        tau = nxt
    return tau


def c_b1_integral(kernel: BridgeKernel, tail_safety: float = 2.0) -> float:
    """Upper bound on ``E int_0^1 |B1(s) Zc_s| ds`` (and on its L2 norm).

    ``E|v| <= sqrt(E|v|^2)`` and Minkowski's inequality give
    ``|| int |B1 Zc| ||_{L2} <= int sqrt(tr(B1 Qhat B1^T)) ds``. The integrand
    behaves like ``(1-s)^{-1/2}`` and is integrated in ``u = sqrt(1-s)``. Very
    close to ``s = 1`` the Gramian ``Q_{1-s}`` is too ill-conditioned to invert,
    so below ``tau_min`` the tail is bounded by ``tail_safety * 2 tau_min f(1 - tau_min)``
    (exact for an integrand ``c tau^{-1/2}``).
    """
    model = kernel.model
    tau_min = _tau_floor(model)
    u_min = np.sqrt(tau_min)

    def f(u):
        return np.sqrt(_b1_qhat_trace(model, 1.0 - u * u, kernel.S1, kernel.G1)) * 2.0 * u

    body, _ = integrate.quad(f, u_min, 1.0, epsabs=1e-10, epsrel=1e-9, limit=200)
    f_edge = np.sqrt(_b1_qhat_trace(model, 1.0 - tau_min, kernel.S1, kernel.G1))
    return float(body + tail_safety * 2.0 * tau_min * f_edge)


def sup_moment_bounds(sups: np.ndarray, n_list, confidence: float) -> dict:
    """One-sided UCBs on ``E sup|Zc|^n`` from per-path sup norms."""
    z = stats.norm.ppf(confidence)
    out = {}
    for n in n_list:
        vals = sups ** n
        est = float(vals.mean())
        se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
        out[float(n)] = CertifiedValue(est + z * se, est, se, confidence, "mc-ucb")
    return out


def min_budget(confidence: float) -> int:
    return int(ceil(10.0 / (1.0 - confidence)))


def bridge_moment_constants(
    kernel: BridgeKernel, n_list=(1, 2), mc_budget: int = 20_000, confidence: float = 0.99, rng=None,
    batch_size: int = DEFAULT_BATCH, workers: int = 1,
) -> MomentReport:
    """Certified ``L(n)``, ``c_B1`` and sup-moment bounds for the bridge kernel.

    ``L(n) = 3^{n-1} max(a^n, 1, u_n)`` for ``n >= 1`` (power-mean inequality) and
    ``max(a^n, 1, u_n)`` for ``n < 1`` (subadditivity), where
    ``a = max_t ||S_t - J_t S_1||`` and ``u_n`` is the UCB on ``E sup_t |Zc_t|^n``.
    Suprema are taken over the grid nodes.
    """
    if not 0.5 < confidence < 1.0:
        raise ValueError("confidence must lie in (0.5, 1)")
    need = min_budget(confidence)
    if mc_budget < need:
        raise ValueError(f"mc_budget {mc_budget} too small for confidence {confidence}; need >= {need}")
    n_list = sorted({float(n) for n in n_list})
    stream = as_stream(rng).spawn("bridge-moments")

    def batch(start, count, gen):
        path = sample_centered_bridge_path(kernel, gen, n_paths=count)
        return np.linalg.norm(path.states, axis=-1).max(axis=1)

    sups = np.concatenate(map_batches(batch, stream, mc_budget, batch_size, workers))
    u = sup_moment_bounds(sups, n_list, confidence)
    det = kernel.S - np.einsum("tij,jk->tik", kernel.J, kernel.S1)
    a = float(np.linalg.norm(det, ord=2, axis=(1, 2)).max())
    L = {}
    for n in n_list:
        base = max(a**n, 1.0, u[n].value)
        L[n] = (3.0 ** (n - 1.0) if n >= 1 else 1.0) * base
    c = c_b1_integral(kernel)
    return MomentReport(L, c, c * c, u, a, confidence, mc_budget)


# --- pointwise exponent and packaging -----------------------------------------------

@dataclass(frozen=True)
class LowerBoundModel:
    """Evaluable minorant ``log l(x, y)`` of the log transition density against ``mu_1``."""

    kernel: BridgeKernel = field(repr=False)
    report: MomentReport
    K: float
    m: float
    c_S: float  # ||Q_1^{-1/2} S_1||
    a_U: float  # max_t ||J_t||       (U(y) <= a_U |y|)
    a_U1: float  # ||Q_1^{-1/2}||      (U1 bound <= a_U1 |y|)
    a_U2: float  # ||S_1^T Q_1^{-1}||  (U2(y) <= a_U2 |y|)
    packaged: tuple | None = None
    eta: float = DEFAULT_ETA

    @property
    def p(self) -> float:
        return max(2.0, 2.0 * self.m)

    def _L(self, n: float) -> float:
        try:
            return self.report.L_table[float(n)]
        except KeyError:
            raise ModelError(f"moment report lacks L({n:g})") from None

    def exponent_terms(self, X, B2X, U, U1, U2) -> np.ndarray:
        """Exponent as a function of ``|x|``, ``|Q_1^{-1/2} S_1 x|`` and the y functionals."""
        K, m = self.K, self.m
        X, B2X, U, U1, U2 = (np.asarray(v, dtype=float) for v in (X, B2X, U, U1, U2))
        Lm, L2m = self._L(m), self._L(2 * m)
        mom2m = 1.0 + X ** (2 * m) + U ** (2 * m)
        momm = 1.0 + X**m + U**m
        cB1 = self.report.c_B1
        total = (
            K * K * (1.0 + L2m * mom2m)
            + K * cB1
            + K * (B2X + U1)
            + K * Lm * momm * (B2X + U1)
            + K * np.sqrt(L2m * mom2m) * np.sqrt(self.report.c_B1_sq)
            + X * U2
            + 0.5 * self.c_S**2 * X * X
        )
        return -total

    def y_terms(self, y):
        U, _, U2 = y_functionals(self.kernel, y)
        return U, u1_certified(self.kernel, y), U2

    def exponent(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        X = np.linalg.norm(x, axis=-1)
        B2X = np.linalg.norm(x @ (self.kernel.G1.pinv_root @ self.kernel.S1).T, axis=-1)
        U, U1, U2 = self.y_terms(y)
        return self.exponent_terms(X, B2X, U, U1, U2)

    def inf_ball_exponent(self, R: float, y) -> np.ndarray:
        """Lower bound on ``inf_{|x| <= R} log l(x, y)`` (every term is monotone in |x|)."""
        U, U1, U2 = self.y_terms(y)
        return self.exponent_terms(R, self.c_S * R, U, U1, U2)

    def monomials(self) -> dict:
        """Coefficients of the polynomial ``P(X, Y) >= -exponent`` with ``X = |x|, Y = |y|``."""
        K, m = self.K, self.m
        Lm, L2m = self._L(m), self._L(2 * m)
        c, aU, a1, a2 = self.c_S, self.a_U, self.a_U1, self.a_U2
        cB = self.report.c_B1
        sq = np.sqrt(L2m) * np.sqrt(self.report.c_B1_sq)
        terms = defaultdict(float)

        def add(coef, a, b):
            if coef != 0.0:
                terms[(float(a), float(b))] += float(coef)

        add(K * K * (1.0 + L2m) + K * cB + K * sq, 0, 0)
        add(K * K * L2m, 2 * m, 0)
        add(K * K * L2m * aU ** (2 * m), 0, 2 * m)
        add(K * c * (1.0 + Lm), 1, 0)
        add(K * a1 * (1.0 + Lm), 0, 1)
        add(K * Lm * c, m + 1, 0)
        add(K * Lm * a1, m, 1)
        add(K * Lm * aU**m * c, 1, m)
        add(K * Lm * aU**m * a1, 0, m + 1)
        add(K * sq, m, 0)
        add(K * sq * aU**m, 0, m)
        add(a2, 1, 1)
        add(0.5 * c * c, 2, 0)
        return dict(terms)

    def package(self, eta: float = DEFAULT_ETA) -> tuple[float, float, float, float]:
        """Young-split ``P(X, Y) <= C0 + b2 X^p + b3 Y^p``; returns ``(log b1, b2, b3, p)``.

        A monomial ``C X^a Y^b`` with ``a + b <= p`` is split by weighted AM-GM with
        weights ``a/p, b/p, 1 - (a+b)/p``; each split assigns ``eta`` to ``X^p`` (and to
        ``Y^p`` when a constant absorbs the remainder).
        """
        if not 0.0 < eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")
        p = self.p
        C0 = b2 = b3 = 0.0
        for (a, b), C in self.monomials().items():
            if a + b > p + 1e-12:
                raise ModelError(f"monomial degree {a + b} exceeds p = {p}")
            wa, wb = a / p, b / p
            w0 = max(1.0 - wa - wb, 0.0)
            if a == 0 and b == 0:
                C0 += C
            elif b == 0 and w0 == 0:
                b2 += C
            elif a == 0 and w0 == 0:
                b3 += C
            elif b == 0:
                alpha = eta / (C * wa)
                b2 += eta
                C0 += C * w0 * alpha ** (-wa / w0)
            elif a == 0:
                beta = eta / (C * wb)
                b3 += eta
                C0 += C * w0 * beta ** (-wb / w0)
            elif w0 == 0:
                alpha = eta / (C * wa)
                b2 += eta
                b3 += C * wb * alpha ** (-wa / wb)
            else:
                alpha = eta / (C * wa)
                beta = eta / (C * wb)
                b2 += eta
                b3 += eta
                C0 += C * w0 * (alpha**wa * beta**wb) ** (-1.0 / w0)
        return -C0, b2, b3, p

    def packaged_exponent(self, x, y) -> np.ndarray:
        if self.packaged is None:
            raise ModelError("packaged bound not computed")
        logb1, b2, b3, p = self.packaged
        X = np.linalg.norm(np.asarray(x, float), axis=-1)
        Y = np.linalg.norm(np.asarray(y, float), axis=-1)
        return logb1 - b2 * X**p - b3 * Y**p


def lower_bound_model(kernel: BridgeKernel, report: MomentReport, drift: DriftSpec) -> LowerBoundModel:
    """Assemble the pointwise minorant for a drift with growth constants ``K, m``."""
    G1 = kernel.G1
    need = {float(drift.m), float(2 * drift.m)}
    missing = need - set(report.L_table)
    if drift.K > 0 and missing:
        raise ModelError(f"moment report lacks L(n) for n in {sorted(missing)}")
    table = dict(report.L_table)
    for n in missing:  # K == 0: the L terms are multiplied by zero
        table[n] = 0.0
    report = MomentReport(table, report.c_B1, report.c_B1_sq, report.u_sup_moments, report.det_norm,
                          report.confidence, report.n_paths)
    return LowerBoundModel(
        kernel=kernel,
        report=report,
        K=float(drift.K),
        m=float(drift.m),
        c_S=float(np.linalg.norm(G1.pinv_root @ kernel.S1, 2)),
        a_U=float(np.linalg.norm(kernel.J, ord=2, axis=(1, 2)).max()),
        a_U1=float(np.linalg.norm(G1.pinv_root, 2)),
        a_U2=float(np.linalg.norm(kernel.S1.T @ G1.pinv, 2)),
    )


def pointwise_lower_bound(report: MomentReport, kernel: BridgeKernel, drift: DriftSpec) -> LowerBoundModel:
    return lower_bound_model(kernel, report, drift)


def verification_grid(d: int, n: int = 21, span: float = 3.0):
    """``(x, y)`` pairs on an ``n x n`` grid of ``[-span, span]^2`` along the first axis."""
    s = np.linspace(-span, span, n)
    e = np.zeros(d)
    e[0] = 1.0
    xs, ys = np.meshgrid(s, s, indexing="ij")
    return xs.ravel()[:, None] * e, ys.ravel()[:, None] * e


def packaged_bound(lbm: LowerBoundModel, eta: float = DEFAULT_ETA, grid_n: int = 21, span: float = 3.0) -> LowerBoundModel:
    """Attach ``(log b1, b2, b3, p)`` and verify packaged <= pointwise on the grid."""
    from dataclasses import replace

    pk = lbm.package(eta)
    out = replace(lbm, packaged=pk, eta=eta)
    x, y = verification_grid(lbm.kernel.model.d, grid_n, span)
    gap = out.exponent(x, y) - out.packaged_exponent(x, y)
    tol = 1e-9 * np.maximum(1.0, np.abs(out.exponent(x, y)))
    if np.any(gap < -tol):
        i = int(np.argmin(gap))
        raise BoundVerificationError(
            f"packaged bound exceeds pointwise bound at x={x[i]}, y={y[i]} by {-gap[i]:.3g} (log scale)"
        )
    return out


# --- small-set constant --------------------------------------------------------------

@dataclass(frozen=True)
class DeltaResult:
    delta: mp.mpf
    log_delta: float
    estimate: mp.mpf
    rel_stderr: float
    confidence: float
    method: str
    R: float
    r: float
    samples: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    vacuous: bool = False

    @property
    def mass(self) -> float:
        return float(self.delta)


def ball_log_mass(lbm: LowerBoundModel, R: float, r: float = np.inf, method: str = "pointwise", n_grid: int = 400):
    """Deterministic ``log E[1_{|y|<r} inf_{|x|<=R} l(x, y)]`` lower bound from small balls.

    For ``|y| <= s``: ``U <= a_U s``, ``U1 <= a_U1 s``, ``U2 <= a_U2 s`` and the exponent is
    nonincreasing in each, while ``P(|y| <= s) >= P(chi2_d <= s^2 / lambda_max(Q_1))``.
    The best ``s`` on a logarithmic grid is returned as ``(log mass, s)``.
    """
    kernel = lbm.kernel
    d = kernel.model.d
    lam = float(kernel.G1.eigenvalues.max())
    hi = min(r * (1.0 - 1e-12), 10.0 * np.sqrt(lam * d))
    s = np.logspace(np.log10(hi) - 8.0, np.log10(hi), n_grid)
    logP = stats.chi2.logcdf(s * s / lam, d)
    if method == "pointwise":
        expo = lbm.exponent_terms(R, lbm.c_S * R, lbm.a_U * s, lbm.a_U1 * s, lbm.a_U2 * s)
    else:
        logb1, b2, b3, p = lbm.packaged
        expo = logb1 - b2 * R**p - b3 * s**p
    val = logP + expo
    i = int(np.argmax(val))
    return float(val[i]), float(s[i])


def delta_small_set(
    lbm: LowerBoundModel, R: float, r: float = np.inf, n_mc: int = 100_000, rng=None,
    confidence: float = 0.99, method: str = "pointwise",
) -> DeltaResult:
    """``delta = 1/2 * E_{y ~ mu_1}[1_{|y| < r} inf_{|x| <= R} l(x, y)]``, bounded from below.

    Two lower bounds of the expectation are formed and the larger is used: the
    Monte-Carlo lower confidence bound, and the deterministic small-ball bound of
    :func:`ball_log_mass` (which survives when the integrand is so peaked that
    the MC estimate degenerates). ``method='packaged'`` uses
    ``l = b1 exp(-b2|x|^p - b3|y|^p)`` instead of the pointwise exponent. The
    result is an mpmath number because it routinely underflows double precision.
    The minorising measure is returned as self-normalised weights on the retained
    ``mu_1`` samples.
    """
    if R <= 0 or r <= 0:
        raise ValueError("radii must be positive")
    if method not in ("pointwise", "packaged"):
        raise ValueError("method must be 'pointwise' or 'packaged'")
    if method == "packaged" and lbm.packaged is None:
        raise ModelError("packaged bound not computed")
    kernel = lbm.kernel
    gen = as_stream(rng).spawn("delta").generator()
    ys = gen.standard_normal((n_mc, kernel.model.d)) @ kernel.G1.root.T
    inside = np.linalg.norm(ys, axis=1) < r
    if method == "pointwise":
        logf = lbm.inf_ball_exponent(R, ys)
    else:
        logb1, b2, b3, p = lbm.packaged
        logf = logb1 - b2 * R**p - b3 * np.linalg.norm(ys, axis=1) ** p
    log_ball, _ = ball_log_mass(lbm, R, r, method)
    if not np.any(inside):
        return DeltaResult(mp.e ** mp.mpf(np.log(0.5) + log_ball), float(np.log(0.5) + log_ball), mp.mpf(0),
                           np.inf, confidence, method + "+ball", R, r, ys[:0], np.zeros(0))
    logf = np.where(inside, logf, -np.inf)
    top = float(logf[inside].max())
    w = np.where(inside, np.exp(logf - top), 0.0)
    mean = float(w.mean())
    se = float(w.std(ddof=1) / np.sqrt(n_mc))
    z = stats.norm.ppf(confidence)
    lcb = mean - z * se
    rel = se / mean if mean > 0 else np.inf
    weights = w[inside] / w[inside].sum()
    est = mp.e ** mp.mpf(top) * mean
    log_mc = top + np.log(lcb) if lcb > 0 else -np.inf
    if not np.isfinite(log_mc) and not np.isfinite(log_ball):
        return DeltaResult(mp.mpf(0), -np.inf, est, rel, confidence, method, R, r, ys[inside], weights, True)
    used = method if log_mc >= log_ball else method + "+ball"
    log_delta = float(np.log(0.5) + max(log_mc, log_ball))
    return DeltaResult(mp.e ** mp.mpf(log_delta), log_delta, est, rel, confidence, used, R, r, ys[inside], weights)
