"""Girsanov weights and Monte-Carlo transition densities.

The transition density of ``dX = (AX + Q^{1/2} G(X)) dt + Q^{1/2} dW`` over
unit time is ``h(x, y) g(x, y)`` against ``mu_1 = N(0, Q_1)``, where ``g`` is
the Cameron-Martin density and ``h`` is an expectation over OU bridges of

    exp( int <G, dzeta> - 1/2 int |G|^2 dt - int <G, B1 Zc + B2 x - B3 y> dt ),

``Zc`` being the centred bridge. All integrals use left-endpoint sums on the
bridge time grid.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .bridge import BridgeKernel, iterate_bridge_sde
from .drift import DriftSpec
from .linop import LinearModel, ModelError, cameron_martin_log_g, gaussian_logpdf, gramian, phi1, psd_sqrt, semigroup
from .rng import DEFAULT_BATCH, as_stream, map_batches

ESS_FRACTION = 0.01
REFERENCES = ("h", "vs_mu1", "vs_lebesgue")


class WeightDegeneracyWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class WeightSummary:
    mean: float
    stderr: float
    ess: float
    n: int
    underflow: bool

    @property
    def degenerate(self) -> bool:
        return self.ess < ESS_FRACTION * self.n

    @property
    def z(self) -> float:
        """Distance of the mean from 1 in standard errors (martingale checks)."""
        if self.stderr == 0.0:
            return 0.0 if self.mean == 1.0 else float("inf")
        return abs(self.mean - 1.0) / self.stderr


def summarize_log_weights(logw: np.ndarray) -> WeightSummary:
    """Mean, stderr and effective sample size of ``exp(logw)`` computed with a max-shift."""
    logw = np.asarray(logw, dtype=float)
    if not np.all(np.isfinite(logw)):
        raise ModelError("non-finite log-weights")
    n = logw.size
    top = float(logw.max())
    w = np.exp(logw - top)
    mean_s = float(w.mean())
    sd_s = float(w.std(ddof=1)) if n > 1 else 0.0
    ess = float(w.sum() ** 2 / np.sum(w * w))
    scale = np.exp(top)
    mean = mean_s * scale
    underflow = mean == 0.0 or not np.isfinite(mean)
    return WeightSummary(mean, sd_s * scale / np.sqrt(n), ess, n, bool(underflow))


@dataclass(frozen=True)
class DensityEstimate:
    value: float
    stderr: float
    n_paths: int
    reference: str
    ess: float = float("nan")
    flags: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.reference not in REFERENCES:
            raise ValueError(f"reference must be one of {REFERENCES}")

    def scaled(self, factor: float, reference: str) -> "DensityEstimate":
        return DensityEstimate(self.value * factor, self.stderr * factor, self.n_paths, reference, self.ess, self.flags)


def _flags(summary: WeightSummary) -> tuple[str, ...]:
    flags = []
    if summary.degenerate:
        flags.append("ess-collapse")
        warnings.warn(
            f"effective sample size {summary.ess:.1f} below {ESS_FRACTION:.0%} of {summary.n} paths",
            WeightDegeneracyWarning, stacklevel=3,
        )
    if summary.underflow:
        flags.append("underflow")
    return tuple(flags)


# --- unconditioned OU paths ----------------------------------------------------

@dataclass(frozen=True)
class OUStepper:
    """Exact joint law of ``(Z_{t+h} - S_h Z_t, W_{t+h} - W_t)`` for a uniform step."""

    h: float
    Sh: np.ndarray
    root: np.ndarray  # (2d, 2d) square root of the joint covariance

    @classmethod
    def build(cls, model: LinearModel, h: float) -> "OUStepper":
        d = model.d
        cross = phi1(model, h) @ model.Qhalf
        C = np.zeros((2 * d, 2 * d))
        C[:d, :d] = gramian(model, h).Qt
        C[:d, d:] = cross
        C[d:, :d] = cross.T
        C[d:, d:] = h * np.eye(d)
        return cls(h, semigroup(model, h), psd_sqrt(C))


def iterate_ou_with_increments(model: LinearModel, x, n_paths: int, gen: np.random.Generator, M: int = 512):
    """Yield ``(i, Z_{t_i}, dW_i)`` for ``i = 0..M-1`` on the uniform grid of ``[0, 1]``."""
    step = OUStepper.build(model, 1.0 / M)
    d = model.d
    Z = np.broadcast_to(np.asarray(x, dtype=float), (n_paths, d)).copy()
    for i in range(M):
        xi = gen.standard_normal((n_paths, 2 * d)) @ step.root.T
        dW = xi[:, d:]
        yield i, Z, dW
        Z = Z @ step.Sh.T + xi[:, :d]


def sample_ou_path(model: LinearModel, x, n_paths: int = 1, rng=None, M: int = 512):
    """Full OU paths ``(n, M+1, d)`` and their Brownian increments ``(n, M, d)``."""
    gen = as_stream(rng).generator()
    step = OUStepper.build(model, 1.0 / M)
    d = model.d
    states = np.empty((n_paths, M + 1, d))
    incs = np.empty((n_paths, M, d))
    Z = np.broadcast_to(np.asarray(x, dtype=float), (n_paths, d)).copy()
    states[:, 0] = Z
    for i in range(M):
        xi = gen.standard_normal((n_paths, 2 * d)) @ step.root.T
        incs[:, i] = xi[:, d:]
        Z = Z @ step.Sh.T + xi[:, :d]
        states[:, i + 1] = Z
    return states, incs


def girsanov_weight(states: np.ndarray, increments: np.ndarray, drift: DriftSpec, dt=None) -> np.ndarray:
    """``rho = sum <G(Z_i), dW_i> - 1/2 sum |G(Z_i)|^2 dt_i`` for paths ``(..., M+1, d)``.

    Returns one value per path (a scalar for a single path).
    """
    states = np.asarray(states, dtype=float)
    increments = np.asarray(increments, dtype=float)
    single = states.ndim == 2
    if single:
        states, increments = states[None], increments[None]
    n, M1, d = states.shape
    M = M1 - 1
    dt = np.full(M, 1.0 / M) if dt is None else np.asarray(dt, dtype=float)
    left = states[:, :-1].reshape(-1, d)
    Gv = drift(left).reshape(n, M, d)
    if not np.all(np.isfinite(Gv)):
        raise ModelError("drift is non-finite along the path")
    rho = np.einsum("nid,nid->n", Gv, increments) - 0.5 * np.einsum("nid,nid,i->n", Gv, Gv, dt)
    return float(rho[0]) if single else rho


def martingale_check(
    model: LinearModel, drift: DriftSpec, x, n_paths: int = 100_000, rng=None, M: int = 512,
    batch_size: int = DEFAULT_BATCH, workers: int = 1,
) -> WeightSummary:
    """Monte-Carlo mean of ``exp(rho)`` over OU paths from ``x``; should be 1."""
    stream = as_stream(rng).spawn("martingale")
    dt = 1.0 / M

    def batch(start, count, gen):
        rho = np.zeros(count)
        for _, Z, dW in iterate_ou_with_increments(model, x, count, gen, M):
            Gv = drift(Z)
            rho += np.einsum("nd,nd->n", Gv, dW) - 0.5 * dt * np.einsum("nd,nd->n", Gv, Gv)
        if not np.all(np.isfinite(rho)):
            raise ModelError("drift is non-finite along OU paths")
        return rho

    rho = np.concatenate(map_batches(batch, stream, n_paths, batch_size, workers))
    summary = summarize_log_weights(rho)
    _flags(summary)
    return summary


# --- bridge functional -----------------------------------------------------------

def log_bridge_functional(kernel: BridgeKernel, drift: DriftSpec, x, y, n_paths: int, gen: np.random.Generator, theta: float = 0.5) -> np.ndarray:
    """One draw of ``log Phi(x, y)`` per path; ``x``/``y`` may be per-path ``(n, d)`` arrays."""
    d = kernel.model.d
    xv = np.broadcast_to(np.asarray(x, dtype=float), (n_paths, d))
    yv = np.broadcast_to(np.asarray(y, dtype=float), (n_paths, d))
    dt = kernel.dt
    r = yv - xv @ kernel.S1.T
    logphi = np.zeros(n_paths)
    for i, X, dz in iterate_bridge_sde(kernel, xv, yv, n_paths, gen, theta):
        if dz is None:
            break
        Gv = drift(X)
        centred = X - xv @ kernel.S[i].T - r @ kernel.J[i].T
        corr = centred @ kernel.B1[i].T + xv @ kernel.B2[i].T - yv @ kernel.B3[i].T
        logphi += (
            np.einsum("nd,nd->n", Gv, dz)
            - dt[i] * (0.5 * np.einsum("nd,nd->n", Gv, Gv) + np.einsum("nd,nd->n", Gv, corr))
        )
    if not np.all(np.isfinite(logphi)):
        raise ModelError("drift is non-finite along bridge paths")
    return logphi


def _bridge_log_weights(kernel, drift, x, y, n_paths, stream, batch_size, workers, theta):
    def batch(start, count, gen):
        return log_bridge_functional(kernel, drift, x, y, count, gen, theta)

    return np.concatenate(map_batches(batch, stream, n_paths, batch_size, workers))


def h_estimate(
    kernel: BridgeKernel, drift: DriftSpec, x, y, n_paths: int = 100_000, rng=None,
    batch_size: int = DEFAULT_BATCH, workers: int = 1, theta: float = 0.5,
) -> DensityEstimate:
    """Monte-Carlo estimate of ``h(x, y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    stream = as_stream(rng).spawn("h_estimate")
    logphi = _bridge_log_weights(kernel, drift, x, y, n_paths, stream, batch_size, workers, theta)
    s = summarize_log_weights(logphi)
    return DensityEstimate(s.mean, s.stderr, n_paths, "h", s.ess, _flags(s))


def transition_density(
    kernel: BridgeKernel, drift: DriftSpec, x, y, n_paths: int = 100_000, rng=None,
    reference: str = "vs_lebesgue", batch_size: int = DEFAULT_BATCH, workers: int = 1, theta: float = 0.5,
) -> DensityEstimate:
    """``h(x, y) g(x, y)`` (density against ``mu_1``) or the Lebesgue density at ``y``."""
    if reference not in ("vs_mu1", "vs_lebesgue"):
        raise ValueError("reference must be 'vs_mu1' or 'vs_lebesgue'")
    model = kernel.model
    h = h_estimate(kernel, drift, x, y, n_paths, rng, batch_size, workers, theta)
    logf = float(cameron_martin_log_g(model, x, y, kernel.S1, kernel.G1))
    if reference == "vs_lebesgue":
        logf += float(gaussian_logpdf(y, np.zeros(model.d), kernel.G1.Qt))
    return h.scaled(np.exp(logf), reference)


def normalization_check(
    kernel: BridgeKernel, drift: DriftSpec, x, n_outer: int = 100_000, rng=None,
    batch_size: int = DEFAULT_BATCH, workers: int = 1, theta: float = 0.5,
) -> WeightSummary:
    """``int h(x, y) g(x, y) mu_1(dy)`` with one bridge per outer sample ``y ~ mu_1``."""
    model = kernel.model
    stream = as_stream(rng).spawn("normalization")
    x = np.asarray(x, dtype=float)
    root = kernel.G1.root

    def batch(start, count, gen):
        ys = gen.standard_normal((count, model.d)) @ root.T
        logphi = log_bridge_functional(kernel, drift, x, ys, count, gen, theta)
        return logphi + cameron_martin_log_g(model, x, ys, kernel.S1, kernel.G1)

    logw = np.concatenate(map_batches(batch, stream, n_outer, batch_size, workers))
    s = summarize_log_weights(logw)
    _flags(s)
    return s


def kde_oracle_density(
    model: LinearModel, drift: DriftSpec, x, y, n_paths: int = 100_000, bandwidth: float | None = None,
    rng=None, h_step: float = 1.0 / 512, n_groups: int = 20, samples: np.ndarray | None = None,
) -> DensityEstimate:
    """Gaussian-kernel estimate of the Lebesgue density of ``X_1^x`` at ``y``.

    ``X_1`` is simulated with the exponential-Euler scheme; the standard error is
    a delete-one-group jackknife over ``n_groups`` contiguous path groups.
    ``bandwidth=None`` uses Scott's rule.
    """
    from .sim import SimConfig, simulate_endpoint

    d = model.d
    if d > 3:
        raise ModelError("kernel density oracle is limited to d <= 3")
    if samples is None:
        cfg = SimConfig(h=h_step, T_max=1.0, n_paths=n_paths)
        samples = simulate_endpoint(model, drift, x, cfg, as_stream(rng).spawn("kde"))
    n = samples.shape[0]
    if bandwidth is None:
        sd = float(np.mean(np.std(samples, axis=0, ddof=1)))
        bandwidth = sd * n ** (-1.0 / (d + 4))
    y = np.asarray(y, dtype=float)
    diff = (samples - y) / bandwidth
    k = np.exp(-0.5 * np.sum(diff * diff, axis=1)) / ((2 * np.pi) ** (d / 2) * bandwidth**d)
    groups = np.array_split(k, n_groups)
    sums = np.array([g.sum() for g in groups])
    counts = np.array([g.size for g in groups])
    total = sums.sum()
    loo = (total - sums) / (n - counts)
    est = total / n
    var = (n_groups - 1) / n_groups * np.sum((loo - loo.mean()) ** 2)
    return DensityEstimate(float(est), float(np.sqrt(var)), n, "vs_lebesgue")
