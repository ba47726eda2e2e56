"""End-to-end assembly of certified bound reports.

``compute_bounds`` chains the pieces: OU moment bounds ``k(p)`` -> ultimate
bound -> small-set radii -> bridge kernel and moment constants -> density
minorant -> ``delta`` -> Meyn-Tweedie constants -> ``(rho, omega, M)``, and, for
superlinear drifts, ``M_hat`` -> uniform ``delta`` -> ``omega_hat`` -> gap table.
Everything random is drawn from named substreams of one seed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import mpmath as mp
import numpy as np

from . import ergodicity as erg
from .bridge import BridgeKernel, TimeGrid, build_bridge_kernel
from .drift import DriftSpec
from .linop import LinearModel, is_stable, ou_moment_k
from .lower_bounds import (
    DEFAULT_ETA,
    LowerBoundModel,
    bridge_moment_constants,
    delta_small_set,
    lower_bound_model,
    packaged_bound,
)
from .rng import as_stream

SURROGATE_NOTE = "constants certify the finite-dimensional surrogate with Euclidean norms"
RHO_NOTE = "M uses the factor exp(-log rho) = 1/rho of the displayed rate formula"


def mp_str(x, digits: int = 17) -> str:
    """Stable text form of an mpmath number (values routinely leave float range)."""
    return mp.nstr(mp.mpf(x), digits, min_fixed=-4, max_fixed=6)


@dataclass
class BoundSettings:
    R: float | None = None
    r: float | None = None
    radius_margin: float = 1.25
    theta_grid: tuple = tuple(np.round(np.linspace(0.05, 0.95, 19), 10))
    rho_policy: str = "argmax"  # or "midpoint"
    M_cap: float | None = None
    eta: float = DEFAULT_ETA
    confidence: float = 0.99
    moment_budget: int = 20_000
    k_budget: int = 200_000
    n_delta: int = 100_000
    delta_method: str = "pointwise"
    grid_M: int = 512
    eps_end: float = 1e-3
    gap_p: tuple = (1.5, 2.0, 4.0)
    uniform: bool = True
    check_symmetry: bool = True


def k_moments(model: LinearModel, rng=None, budget: int = 200_000, confidence: float = 0.99):
    """Memoised ``p -> k(p)`` upper bounds."""
    stream = as_stream(rng).spawn("k-moments")
    cache = {}

    def k(p):
        p = float(p)
        if p not in cache:
            cache[p] = ou_moment_k(model, p, budget, stream, confidence)
        return cache[p]

    return k


def ultimate_bound(model: LinearModel, drift: DriftSpec, kfun) -> erg.UltimateBound:
    if drift.has_dissipativity:
        if not is_stable(model.A):
            raise erg.BoundInputError("the growth-based ultimate bound needs a stable A (finite k(p))")
        return erg.ultimate_bound_from_growth(drift, kfun)
    if drift.linear is not None:
        return erg.closed_loop_ultimate_bound(model, drift)
    raise erg.BoundInputError("drift has neither dissipativity constants nor a linear closed loop")


@dataclass
class BoundReport:
    """Certified ergodicity constants for one (model, drift) pair."""

    drift_name: str
    K: float
    m: float
    confidence: float
    ultimate: erg.UltimateBound
    small_set: erg.SmallSetConfig
    delta: object  # DeltaResult
    mt: erg.MTConstants
    rates: erg.RateReport
    packaged: tuple | None
    uniform: dict | None
    gap: dict
    symmetric: bool
    footnotes: list = field(default_factory=list)

    @property
    def omega(self):
        return self.rates.best.omega

    @property
    def M(self):
        return self.rates.best.M

    def v_uniform_bound(self, x, times) -> list:
        """``M (|x| + 1) exp(-omega t)`` as mpmath numbers."""
        v = mp.mpf(float(np.linalg.norm(x))) + 1
        return [self.M * v * mp.exp(-self.omega * mp.mpf(float(t))) for t in times]

    def uniform_bound(self, times, initial_distance: float = 2.0) -> list:
        if self.uniform is None:
            raise erg.BoundInputError("no uniform rate (drift is not superlinear)")
        pref, wh = self.uniform["prefactor"], self.uniform["omega_hat"]
        return [pref * initial_distance * mp.exp(-wh * mp.mpf(float(t))) for t in times]

    def rate_section(self) -> dict:
        """The part of the report that depends only on ``(K, m, k0, k1, c_hat)`` and the model."""
        mt = self.mt
        return {
            "ultimate_bound": {"k0": self.ultimate.k0, "k1": self.ultimate.k1, "c_hat": self.ultimate.c_hat},
            "small_set": {
                "R": self.small_set.R, "r": self.small_set.r, "t0": self.small_set.t0,
                "T": self.small_set.T, "b": self.small_set.b, "notes": list(self.small_set.notes),
            },
            "delta": {
                "value": mp_str(self.delta.delta), "log": self.delta.log_delta, "method": self.delta.method,
                "rel_stderr": self.delta.rel_stderr, "confidence": self.delta.confidence,
                "vacuous": self.delta.vacuous,
            },
            "meyn_tweedie": {
                "v": mp_str(mt.v), "gamma_c": mp_str(mt.gamma_c), "lambda_hat": mp_str(mt.lambda_hat),
                "one_minus_lambda_hat": mp_str(mt.one_minus_lambda), "b_hat": mp_str(mt.b_hat),
                "xi_bar": mp_str(mt.xi_bar), "M_c": mp_str(mt.M_c),
            },
            "rate": {
                "theta": self.rates.best.theta,
                "rho": "1 - " + mp_str(self.rates.best.one_minus_rho),
                "one_minus_rho": mp_str(self.rates.best.one_minus_rho),
                "omega": mp_str(self.omega),
                "M": mp_str(self.M),
                "M_cap": self.rates.M_cap,
            },
        }

    def to_dict(self) -> dict:
        out = {
            "kind": "bounds",
            "drift": {"name": self.drift_name, "K": self.K, "m": self.m},
            "confidence": self.confidence,
        }
        out.update(self.rate_section())
        out["packaged"] = None if self.packaged is None else dict(zip(("log_b1", "b2", "b3", "p"), map(float, self.packaged)))
        if self.uniform is not None:
            u = self.uniform
            out["uniform"] = {
                "M_hat": u["M_hat"], "R": u["R"], "delta": mp_str(u["delta"].delta), "log_delta": u["delta"].log_delta,
                "omega_hat": mp_str(u["omega_hat"]), "prefactor": mp_str(u["prefactor"]),
            }
        else:
            out["uniform"] = None
        out["gap"] = {k: mp_str(v) for k, v in self.gap.items()}
        out["symmetric"] = self.symmetric
        out["footnotes"] = list(self.footnotes)
        return out

    def rate_table(self) -> list[dict]:
        return [{"theta": r.theta, "one_minus_rho": mp_str(r.one_minus_rho), "omega": mp_str(r.omega), "M": mp_str(r.M)}
                for r in self.rates.table]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False)


def build_lower_bound(model: LinearModel, drift: DriftSpec, settings: BoundSettings, rng=None,
                      kernel: BridgeKernel | None = None) -> LowerBoundModel:
    kernel = kernel or build_bridge_kernel(model, TimeGrid(settings.grid_M, settings.eps_end))
    n_list = sorted({float(drift.m), float(2 * drift.m), 1.0, 2.0})
    report = bridge_moment_constants(kernel, n_list, settings.moment_budget, settings.confidence,
                                     as_stream(rng).spawn("moments"))
    lbm = lower_bound_model(kernel, report, drift)
    return packaged_bound(lbm, settings.eta)


def compute_bounds(model: LinearModel, drift: DriftSpec, settings: BoundSettings | None = None, rng=None,
                   kernel: BridgeKernel | None = None, lbm: LowerBoundModel | None = None) -> BoundReport:
    s = settings or BoundSettings()
    stream = as_stream(rng)
    notes = [SURROGATE_NOTE, RHO_NOTE]
    kfun = k_moments(model, stream, s.k_budget, s.confidence) if is_stable(model.A) else None
    ub = ultimate_bound(model, drift, kfun)
    R0, r0 = erg.default_radii(ub, s.radius_margin)
    cfg = erg.small_set_config(ub, s.R if s.R is not None else R0, s.r if s.r is not None else r0)
    lbm = lbm or build_lower_bound(model, drift, s, stream, kernel)
    delta = delta_small_set(lbm, cfg.R, cfg.r, s.n_delta, stream.spawn("delta-v"), s.confidence, s.delta_method)
    if delta.vacuous:
        raise erg.BoundInputError("small-set constant delta is vacuous after the confidence adjustment")
    mt = erg.mt_constants(delta.delta, cfg.b, cfg.r + 1.0)
    grid = (0.5,) if s.rho_policy == "midpoint" else s.theta_grid
    rates = erg.rate_report(cfg, mt, ub, grid, s.M_cap)

    uniform = None
    if s.uniform and drift.eps is not None and drift.has_dissipativity and kfun is not None:
        Mh = erg.mhat(drift, kfun)
        du = delta_small_set(lbm, 2.0 * Mh, np.inf, s.n_delta, stream.spawn("delta-u"), s.confidence, s.delta_method)
        if not du.vacuous:
            wh, pref = erg.uniform_rate(du.delta)
            uniform = {"M_hat": Mh, "R": 2.0 * Mh, "delta": du, "omega_hat": wh, "prefactor": pref}
        else:
            notes.append("uniform delta vacuous; no uniform rate reported")

    symmetric = bool(drift.symmetric)
    if symmetric and s.check_symmetry:
        chk = erg.symmetry_check(model, drift, stream.spawn("symmetry"))
        if not chk["consistent"]:
            symmetric = False
            notes.append(f"symmetry claim rejected by numerical check: {chk}")
    gap = {}
    for p in s.gap_p:
        if p == 1 and not symmetric:
            continue
        if uniform is not None:
            gap[f"p={p:g}"] = erg.spectral_gap(uniform["omega_hat"], None, p, symmetric)["omega_hat_over_p"]
    if symmetric:
        gap["l2_symmetric"] = rates.best.omega
    if s.delta_method == "pointwise":
        notes.append("delta integrates the pointwise exponent; the packaged form is reported for reference")
    notes.append(f"MC-derived constants hold at one-sided confidence {s.confidence}")
    return BoundReport(drift.name, drift.K, drift.m, s.confidence, ub, cfg, delta, mt, rates,
                       lbm.packaged, uniform, gap, symmetric, notes)


# --- experiments built on a report -------------------------------------------------------

def linear_tv_curves(model: LinearModel, drift: DriftSpec, bound, x_list, times, rng=None, n_mc: int = 200_000,
                     label: str = "v-uniform") -> list:
    """Exact-law TV curves for a linear drift: ``N(S^cl_t x, Q^cl_t)`` against ``N(0, Q^cl_inf)``.

    ``bound(x, times)`` gives the certified values. The distance between the two
    Gaussians is computed by Monte Carlo over the first law (covariances differ).
    """
    from .drift import closed_loop_model
    from .linop import gramian, semigroup, stationary_covariance
    from .sim import TVCurve, compare_to_bound, gaussian_tv

    cl = closed_loop_model(model, drift)
    Qinf = stationary_covariance(cl)
    stream = as_stream(rng).spawn("linear-tv", label)
    times = np.asarray(times, dtype=float)
    curves = []
    for k, x in enumerate(x_list):
        x = np.asarray(x, dtype=float)
        est = [gaussian_tv(semigroup(cl, t) @ x, gramian(cl, t).Qt, np.zeros(model.d), Qinf, n_mc,
                           stream.spawn(k, j)) for j, t in enumerate(times)]
        tv = np.array([e.tv for e in est])
        se = np.array([e.stderr for e in est])
        b = bound(x, times)
        ok = compare_to_bound(tv, se, b)
        curves.append(TVCurve(f"{label}:x={np.array2string(x, precision=3)}", times, tv, se, b, bool(ok.all()),
                              ["exact Gaussian laws (linear drift)"]))
    return curves


def scaled_bound(report: BoundReport, omega_factor: float = 1.0):
    """``x, times -> M (|x|+1) exp(-factor * omega * t)``; ``factor > 1`` is the negative control."""
    def bound(x, times):
        v = mp.mpf(float(np.linalg.norm(x))) + 1
        w = report.omega * omega_factor
        return [report.M * v * mp.exp(-w * mp.mpf(float(t))) for t in times]

    return bound


def cubic_family(a: float = 1.0):
    """``alpha -> G_alpha(x) = -a x^3 + alpha x`` (shared growth class for small alpha)."""
    from .presets import cubic_drift

    return lambda alpha: cubic_drift(a, alpha)
