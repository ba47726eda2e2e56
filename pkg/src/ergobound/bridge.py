"""Ornstein-Uhlenbeck bridge kernels and samplers.

The bridge from ``x`` (time 0) to ``y`` (time 1) is Gaussian with mean
``S_t x + J_t (y - S_1 x)`` and covariance ``Qhat_t``, where
``J_t = Q_t S_{1-t}^T Q_1^{-1}``. Two samplers are provided:

* :func:`sample_centered_bridge_path` transforms an exactly simulated OU path,
  ``Zhat_t = Z_t - J_t Z_1`` (exact in law at the nodes);
* :func:`sample_bridge_sde_path` integrates the bridge SDE
  ``dX = [AX + Q S_{1-t}^T Q_{1-t}^{-1} (y - S_{1-t} X)] dt + Q^{1/2} dzeta``
  with a theta-Euler-Maruyama scheme and keeps the ``zeta`` increments, which
  the transition-density functional integrates against.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linop import Gramian, LinearModel, ModelError, gramian, semigroup
from .rng import as_stream

BLOWUP = 1e8


class BridgeError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """``M`` steps on ``[0, 1]``: ``M - 1`` uniform steps up to ``1 - eps_end``, then one to 1."""

    M: int = 512
    eps_end: float = 1e-3

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("M must be at least 2")
        if not (0.0 < self.eps_end <= 0.1):
            raise ValueError("eps_end must lie in (0, 0.1]")

    @property
    def nodes(self) -> np.ndarray:
        t = np.empty(self.M + 1)
        t[:-1] = np.linspace(0.0, 1.0 - self.eps_end, self.M)
        t[-1] = 1.0
        return t

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    def index_of(self, t: float, tol: float = 1e-12) -> int:
        nodes = self.nodes
        i = int(np.argmin(np.abs(nodes - t)))
        if abs(nodes[i] - t) > tol:
            raise ValueError(f"t={t} is not a grid node")
        return i

    def refined(self) -> "TimeGrid":
        """Doubled step count and halved terminal margin."""
        return TimeGrid(2 * self.M, self.eps_end / 2)


@dataclass(frozen=True)
class BridgeKernel:
    """Node tables of the bridge operators.

    Arrays indexed by node ``i = 0..M`` hold ``S``, ``Q``, ``V``, ``J``, ``Qhat``;
    the arrays ``H``, ``B1``, ``B2``, ``B3`` and the drift gain ``D`` are singular
    at ``t = 1`` and are tabulated only on the left nodes ``i = 0..M-1``.
    """

    model: LinearModel
    grid: TimeGrid
    S1: np.ndarray
    G1: Gramian
    S: np.ndarray
    Q: np.ndarray
    V: np.ndarray
    J: np.ndarray
    Qhat: np.ndarray
    H: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    B3: np.ndarray
    D: np.ndarray
    Srev: np.ndarray

    @property
    def t(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def dt(self) -> np.ndarray:
        return self.grid.steps

    def bridge_mean(self, x, y) -> np.ndarray:
        """Bridge means at every node; broadcasts over leading axes of ``x``/``y``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r = y - x @ self.S1.T
        return np.einsum("tij,...j->...ti", self.S, x) + np.einsum("tij,...j->...ti", self.J, r)


def build_bridge_kernel(model: LinearModel, grid: TimeGrid | None = None, cond_max: float = 1e14) -> BridgeKernel:
    grid = grid or TimeGrid()
    t = grid.nodes
    d = model.d
    G1 = gramian(model, 1.0)
    if not G1.is_invertible:
        raise ModelError("Q_1 is singular: the OU process is not strong Feller")
    S1 = semigroup(model, 1.0)
    n = t.size
    S = np.empty((n, d, d))
    Srev = np.empty((n, d, d))
    Qt = np.empty((n, d, d))
    V = np.empty((n, d, d))
    J = np.empty((n, d, d))
    Qhat = np.empty((n, d, d))
    H = np.empty((n - 1, d, d))
    B1 = np.empty((n - 1, d, d))
    B3 = np.empty((n - 1, d, d))
    D = np.empty((n - 1, d, d))
    Qh = model.Qhalf
    for i, ti in enumerate(t):
        S[i] = semigroup(model, ti)
        Srev[i] = semigroup(model, 1.0 - ti)
        Gt = gramian(model, ti)
        Qt[i] = Gt.Qt
        V[i] = G1.pinv_root @ Srev[i] @ Gt.root
        J[i] = Gt.Qt @ Srev[i].T @ G1.pinv
        qh = Gt.Qt - J[i] @ Srev[i] @ Gt.Qt
        Qhat[i] = 0.5 * (qh + qh.T)
        if i == n - 1:
            continue
        Grev = gramian(model, 1.0 - ti)
        if not Grev.is_invertible or Grev.condition > cond_max:
            raise BridgeError(
                f"Q_(1-t) near-singular at node {i} (t={ti:.6g}, condition {Grev.condition:.3g}); "
                "increase eps_end"
            )
        H[i] = Grev.pinv_root @ Srev[i] @ Qh
        B1[i] = Qh @ Srev[i].T @ Grev.pinv @ Srev[i]
        B3[i] = Qh @ Srev[i].T @ G1.pinv
        D[i] = model.Q @ Srev[i].T @ Grev.pinv
    B2 = B3 @ S1
    return BridgeKernel(model, grid, S1, G1, S, Qt, V, J, Qhat, H, B1, B2, B3, D, Srev)


def v_norm_profile(kernel: BridgeKernel) -> list[tuple[float, float, bool]]:
    """``(t, ||V_t||, flagged)`` at interior nodes; ``flagged`` marks norms >= 1."""
    out = []
    for i in range(1, kernel.grid.M):
        nrm = float(np.linalg.norm(kernel.V[i], 2))
        out.append((float(kernel.t[i]), nrm, nrm >= 1.0))
    return out


def kernel_identity_residual(kernel: BridgeKernel) -> float:
    """``max_t ||Qhat_t - Q_t^{1/2} (I - V_t^T V_t) Q_t^{1/2}||``, the two covariance formulas."""
    worst = 0.0
    d = kernel.model.d
    for i in range(kernel.t.size):
        root = gramian(kernel.model, kernel.t[i]).root
        alt = root @ (np.eye(d) - kernel.V[i].T @ kernel.V[i]) @ root
        worst = max(worst, float(np.abs(alt - kernel.Qhat[i]).max()))
    return worst


def bridge_marginal(kernel: BridgeKernel, x, y, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the bridge at time ``t in [0, 1]``."""
    model = kernel.model
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    St = semigroup(model, t)
    Srev = semigroup(model, 1.0 - t)
    Qt = gramian(model, t).Qt
    J = Qt @ Srev.T @ kernel.G1.pinv
    mean = St @ x + J @ (y - kernel.S1 @ x)
    cov = Qt - J @ Srev @ Qt
    return mean, 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class BridgePath:
    """Bridge states at the recorded node indices, plus the driving increments."""

    grid: TimeGrid
    node_index: np.ndarray
    states: np.ndarray
    noise_increments: np.ndarray | None
    x: np.ndarray
    y: np.ndarray


def _ou_step_roots(kernel: BridgeKernel) -> np.ndarray:
    dt = kernel.dt
    return np.stack([gramian(kernel.model, h).root for h in dt])


def sample_centered_bridge_path(
    kernel: BridgeKernel, rng=None, n_paths: int = 1, nodes=None
) -> BridgePath:
    """Strategy A: exact OU path from 0, then ``Zhat_t = Z_t - J_t Z_1``."""
    gen = as_stream(rng).generator() if not isinstance(rng, np.random.Generator) else rng
    M = kernel.grid.M
    d = kernel.model.d
    idx = np.arange(M + 1) if nodes is None else np.asarray(nodes, dtype=int)
    roots = _ou_step_roots(kernel)
    Sh = np.stack([semigroup(kernel.model, h) for h in kernel.dt])
    Z = np.zeros((n_paths, M + 1, d))
    for i in range(M):
        Z[:, i + 1] = Z[:, i] @ Sh[i].T + gen.standard_normal((n_paths, d)) @ roots[i].T
    Zhat = Z - np.einsum("tij,nj->nti", kernel.J, Z[:, -1])
    Zhat[:, -1] = 0.0
    zero = np.zeros(d)
    return BridgePath(kernel.grid, idx, Zhat[:, idx], None, zero, zero)


@dataclass(frozen=True)
class _SDEScheme:
    P: np.ndarray
    L: np.ndarray
    Cy: np.ndarray


def _theta_scheme(kernel: BridgeKernel, theta: float) -> _SDEScheme:
    """Linear step maps ``X_{n+1} = P_n X_n + Cy_n y + L_n Q^{1/2} dzeta_n`` for n < M-1."""
    A = kernel.model.A
    d = A.shape[0]
    I = np.eye(d)
    dt = kernel.dt
    F = A[None] - kernel.D @ kernel.Srev[:-1]
    nsteps = kernel.grid.M - 1
    P = np.empty((nsteps, d, d))
    L = np.empty((nsteps, d, d))
    Cy = np.empty((nsteps, d, d))
    for n in range(nsteps):
        h = dt[n]
        Ln = np.linalg.inv(I - theta * h * F[n + 1])
        L[n] = Ln
        P[n] = Ln @ (I + (1 - theta) * h * F[n])
        Cy[n] = Ln @ (h * ((1 - theta) * kernel.D[n] + theta * kernel.D[n + 1]))
    return _SDEScheme(P, L, Cy)


_SCHEMES: dict[tuple[int, float], tuple[BridgeKernel, _SDEScheme]] = {}


def _scheme_for(kernel: BridgeKernel, theta: float) -> _SDEScheme:
    key = (id(kernel), theta)
    hit = _SCHEMES.get(key)
    if hit is not None and hit[0] is kernel:  # the stored reference guards against id reuse
        return hit[1]
    if len(_SCHEMES) > 32:
        _SCHEMES.clear()
    sch = _theta_scheme(kernel, theta)
    _SCHEMES[key] = (kernel, sch)
    return sch


def iterate_bridge_sde(kernel: BridgeKernel, x, y, n_paths: int, gen: np.random.Generator, theta: float = 0.5):
    """Yield ``(i, X_i, dzeta_i)`` for ``i = 0..M-1``, then ``(M, y, None)``.

    ``x`` and ``y`` may be single d-vectors or per-path arrays of shape ``(n_paths, d)``.
    The last step jumps to ``y``; its increment is still drawn so that every
    left node carries one.
    """
    M = kernel.grid.M
    d = kernel.model.d
    dt = kernel.dt
    sch = _scheme_for(kernel, theta)
    Qh = kernel.model.Qhalf
    X = np.broadcast_to(np.asarray(x, dtype=float), (n_paths, d)).copy()
    yv = np.broadcast_to(np.asarray(y, dtype=float), (n_paths, d))
    for i in range(M):
        dz = gen.standard_normal((n_paths, d)) * np.sqrt(dt[i])
        yield i, X, dz
        if i == M - 1:
            break
        X = X @ sch.P[i].T + yv @ sch.Cy[i].T + (dz @ Qh.T) @ sch.L[i].T
        if not np.all(np.isfinite(X)) or np.abs(X).max() > BLOWUP:
            raise BridgeError(
                f"bridge SDE blew up at node {i + 1} (t={kernel.t[i + 1]:.6g}); "
                "step size or eps_end too coarse"
            )
    yield M, np.array(yv), None


def sample_bridge_sde_path(
    kernel: BridgeKernel, x, y, rng=None, n_paths: int = 1, nodes=None, theta: float = 0.5,
    keep_noise: bool = True,
) -> BridgePath:
    """Strategy B: integrate the bridge SDE and keep its driving increments."""
    gen = as_stream(rng).generator() if not isinstance(rng, np.random.Generator) else rng
    M = kernel.grid.M
    d = kernel.model.d
    idx = np.arange(M + 1) if nodes is None else np.asarray(nodes, dtype=int)
    pos = {int(j): k for k, j in enumerate(idx)}
    states = np.empty((n_paths, idx.size, d))
    noise = np.empty((n_paths, M, d)) if keep_noise else None
    for i, X, dz in iterate_bridge_sde(kernel, x, y, n_paths, gen, theta):
        if i in pos:
            states[:, pos[i]] = X
        if dz is not None and keep_noise:
            noise[:, i] = dz
    return BridgePath(kernel.grid, idx, states, noise, np.asarray(x, float), np.asarray(y, float))


def scheme_moments(kernel: BridgeKernel, x, y, theta: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Exact node means/covariances of the discretised bridge SDE (it is linear)."""
    sch = _scheme_for(kernel, theta)
    M = kernel.grid.M
    d = kernel.model.d
    Q = kernel.model.Q
    mean = np.empty((M + 1, d))
    cov = np.empty((M + 1, d, d))
    mean[0] = x
    cov[0] = 0.0
    for n in range(M - 1):
        h = kernel.dt[n]
        mean[n + 1] = sch.P[n] @ mean[n] + sch.Cy[n] @ y
        cov[n + 1] = sch.P[n] @ cov[n] @ sch.P[n].T + h * sch.L[n] @ Q @ sch.L[n].T
    mean[M] = y
    cov[M] = 0.0
    return mean, cov


def _moment_table(samples: np.ndarray):
    """Sample mean/cov with standard errors; ``samples`` is ``(n, d)``."""
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    mean_se = samples.std(axis=0, ddof=1) / np.sqrt(n)
    c = samples - mean
    prod = c[:, :, None] * c[:, None, :]
    cov = prod.sum(axis=0) / (n - 1)
    cov_se = prod.std(axis=0, ddof=1) / np.sqrt(n)
    return mean, mean_se, cov, cov_se


def validate_marginals(
    kernel: BridgeKernel, x, y, times=(0.25, 0.5, 0.75), n_paths: int = 100_000, rng=None,
    batch_size: int = 8192, sigmas: float = 3.0, theta: float = 0.5,
) -> list[dict]:
    """Compare both samplers' node marginals with the Gaussian-conditioning oracle.

    Each requested time is mapped to the nearest grid node, and the oracle is
    evaluated at that node time. Rows carry estimate, oracle, standard error and
    the pass flag ``|estimate - oracle| <= sigmas * stderr`` per mean coordinate
    and covariance entry.
    """
    from .rng import map_batches

    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = kernel.model.d
    nodes = np.array([int(np.argmin(np.abs(kernel.t - t))) for t in times])
    stream = as_stream(rng).spawn("validate-marginals")
    means = kernel.bridge_mean(x, y)[nodes]

    def batch_a(start, count, gen):
        return sample_centered_bridge_path(kernel, gen, count, nodes).states + means

    def batch_b(start, count, gen):
        return sample_bridge_sde_path(kernel, x, y, gen, count, nodes, theta, keep_noise=False).states

    rows = []
    for label, fn in (("A", batch_a), ("B", batch_b)):
        states = np.concatenate(map_batches(fn, stream.spawn(label), n_paths, batch_size))
        for k, i in enumerate(nodes):
            t = float(kernel.t[i])
            m_or, c_or = bridge_marginal(kernel, x, y, t)
            m, mse, c, cse = _moment_table(states[:, k])
            for a in range(d):
                rows.append({"strategy": label, "t": t, "quantity": f"mean[{a}]", "estimate": float(m[a]),
                             "oracle": float(m_or[a]), "stderr": float(mse[a])})
            for a in range(d):
                for b in range(a, d):
                    rows.append({"strategy": label, "t": t, "quantity": f"cov[{a},{b}]", "estimate": float(c[a, b]),
                                 "oracle": float(c_or[a, b]), "stderr": float(cse[a, b])})
    for r in rows:
        r["pass"] = bool(abs(r["estimate"] - r["oracle"]) <= sigmas * r["stderr"] + 1e-14)
    return rows
