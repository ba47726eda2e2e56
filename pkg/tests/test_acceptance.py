"""Acceptance criteria, one test each; every test prints one ``ACCEPTANCE n: PASS|FAIL`` line.

Tolerances and sample sizes are the contract values and must not be relaxed.
Run with ``pytest -m acceptance -s`` to see the lines as they are produced; they
are also collected in the terminal summary.
"""
import time
from pathlib import Path

import mpmath as mp
import numpy as np
import pytest
from scipy import stats

from ergobound import ergodicity as erg
from ergobound.bridge import TimeGrid, build_bridge_kernel, validate_marginals
from ergobound.config import load_config
from ergobound.girsanov import kde_oracle_density, martingale_check, normalization_check, transition_density
from ergobound.linop import gramian
from ergobound.lower_bounds import verification_grid
from ergobound.pipeline import (
    BoundSettings,
    build_lower_bound,
    canonical_json,
    compute_bounds,
    cubic_family,
    linear_tv_curves,
    scaled_bound,
)
from ergobound.presets import cubic_drift
from ergobound.sim import SimConfig, autocorrelation_rate, parameter_sweep, simulate_endpoint, two_chain_experiment

from oracles import (
    LINEAR_DENSITY,
    MT_B_HAT,
    MT_GAMMA_C,
    MT_LAMBDA_HAT,
    MT_M_C,
    MT_M_MID,
    MT_OMEGA_MID,
    MT_XI_BAR,
)

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
LADDER = np.round(np.linspace(0.5, 5.0, 10), 10)
N = 100_000


@pytest.fixture(scope="module")
def cubic_report(cub):
    return compute_bounds(*cub, BoundSettings(), rng=7)


def test_01_closed_forms(s1, record):
    start = time.perf_counter()
    kernel = build_bridge_kernel(s1[0], TimeGrid(M=10, eps_end=0.1))
    q1 = (1 - np.exp(-2.0)) / 2
    worst = 0.0
    for t in np.round(np.arange(1, 10) / 10, 10):
        i = kernel.grid.index_of(t)
        qt = (1 - np.exp(-2 * t)) / 2
        er = np.exp(-(1 - t))
        oracle = {"Q": qt, "V": er * np.sqrt(qt / q1), "J": qt * er / q1, "Qhat": qt - qt**2 * er**2 / q1}
        got = {"Q": kernel.Q[i, 0, 0], "V": kernel.V[i, 0, 0], "J": kernel.J[i, 0, 0], "Qhat": kernel.Qhat[i, 0, 0]}
        got["Q_direct"] = gramian(s1[0], t).Qt[0, 0]
        oracle["Q_direct"] = qt
        worst = max(worst, max(abs(got[k] / oracle[k] - 1) for k in oracle))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-9 and elapsed < 1.0
    record(1, ok, f"closed forms Q, V, J, Qhat at t=0.1..0.9: max rel err {worst:.2e} (tol 1e-9), {elapsed:.2f}s (< 1s)")
    assert ok


def test_02_bridge_law(osc, record):
    start = time.perf_counter()
    kernel = build_bridge_kernel(osc[0])
    rows = validate_marginals(kernel, [1.0, 1.0], [0.0, 0.0], n_paths=N, rng=20240501)
    fails = [r for r in rows if not r["pass"]]
    elapsed = time.perf_counter() - start
    ok = not fails and elapsed < 120
    worst = max(abs(r["estimate"] - r["oracle"]) / r["stderr"] for r in rows if r["stderr"] > 0)
    record(2, ok, f"OSC bridge marginals, strategies A and B, {len(rows)} comparisons, {len(fails)} outside 3 SE "
                  f"(max {worst:.2f} SE), {elapsed:.0f}s (< 120s)")
    assert ok


def test_03_martingale(s1lin, cub, record):
    start = time.perf_counter()
    zs = {}
    for name, (model, drift) in (("SCALAR1-linear", s1lin), ("CUBIC", cub)):
        s = martingale_check(model, drift, [0.0], n_paths=N, rng=3)
        zs[name] = (s.mean, s.z)
    elapsed = time.perf_counter() - start
    ok = all(z < 3 for _, z in zs.values()) and elapsed < 60
    detail = "; ".join(f"{k}: mean {m:.4f}, |mean-1| = {z:.2f} SE" for k, (m, z) in zs.items())
    record(3, ok, f"E exp(rho) = 1 at 1e5 paths: {detail}; {elapsed:.0f}s (< 60s)")
    assert ok


def test_04_density(s1lin, record):
    start = time.perf_counter()
    model, drift = s1lin
    grid = TimeGrid()
    k1, k2 = build_bridge_kernel(model, grid), build_bridge_kernel(model, grid.refined())
    worst_rel, worst_shift = 0.0, 0.0
    for (x, y), exact in LINEAR_DENSITY.items():
        a = transition_density(k1, drift, [x], [y], n_paths=N, rng=4)
        b = transition_density(k2, drift, [x], [y], n_paths=N, rng=5)
        worst_rel = max(worst_rel, abs(a.value - exact) / exact)
        worst_shift = max(worst_shift, abs(a.value - b.value) / np.hypot(a.stderr, b.stderr))
    elapsed = time.perf_counter() - start
    ok = worst_rel < 0.05 and worst_shift < 3 and elapsed < 300
    record(4, ok, f"bridge-MC density vs exact at 9 points: max rel err {worst_rel:.4f} (< 0.05); grid doubling "
                  f"max shift {worst_shift:.2f} sigma (< 3); {elapsed:.0f}s (< 300s)")
    assert ok


def test_05_normalization(s1lin, cub, record):
    out = {}
    for name, (model, drift) in (("SCALAR1-linear", s1lin), ("CUBIC", cub)):
        kernel = build_bridge_kernel(model)
        s = normalization_check(kernel, drift, [1.0], n_outer=N, rng=6)
        out[name] = (s.mean, s.z)
    ok = all(z < 3 for _, z in out.values())
    detail = "; ".join(f"{k}: {m:.4f} ({z:.2f} SE from 1)" for k, (m, z) in out.items())
    record(5, ok, f"normalization of h g against mu_1 at x=1, 1e5 outer samples: {detail}")
    assert ok


def test_06_dominance(s1lin, cub, record):
    settings = BoundSettings()
    # linear fixture: exact density of X_1 against mu_1
    lin = build_lower_bound(*s1lin, settings, rng=8)
    x, y = verification_grid(1, 21, 3.0)
    q1 = (1 - np.exp(-2.0)) / 2
    var = (1 - np.exp(-4.0)) / 4
    log_exact = (stats.norm.logpdf(y[:, 0], np.exp(-2.0) * x[:, 0], np.sqrt(var))
                 - stats.norm.logpdf(y[:, 0], 0.0, np.sqrt(q1)))
    lin_ok = bool(np.all(lin.exponent(x, y) <= log_exact))
    # cubic: Lebesgue-scale minorant l(x, y) phi_{Q1}(y) against a KDE of X_1
    cb = build_lower_bound(*cub, settings, rng=9)
    cub_ok = True
    n_checked = 0
    for xv in (-2.0, -1.0, 0.0, 1.0, 2.0):
        sample = simulate_endpoint(*cub, [xv], SimConfig(h=1 / 512, T_max=1.0, n_paths=N), rng=10)
        for yv in (-1.0, -0.5, 0.0, 0.5, 1.0):
            kde = kde_oracle_density(*cub, [xv], [yv], samples=sample)
            lower = np.exp(cb.exponent([xv], [yv]) + stats.norm.logpdf(yv, 0.0, np.sqrt(q1)))
            cub_ok &= bool(lower <= kde.value - 3 * kde.stderr)
            n_checked += 1
    pk_ok = True
    for lbm in (lin, cb):
        pk_ok &= bool(np.all(lbm.packaged_exponent(x, y) <= lbm.exponent(x, y)))
    ok = lin_ok and cub_ok and pk_ok
    record(6, ok, f"lower bound <= exact linear density on 21x21: {lin_ok}; CUBIC l phi <= KDE - 3 SE at "
                  f"{n_checked} points: {cub_ok}; packaged <= pointwise on 21x21 (both drifts): {pk_ok}")
    assert ok


def test_07_meyn_tweedie(record):
    mt = erg.mt_constants(0.5, 1, 2)
    row = erg.rate_row(0.5, mt, 1.0, erg.UltimateBound(1.0, 1.0, 0.5))

    def rel(a, b):
        return float(abs(mp.mpf(a) / mp.mpf(b) - 1))

    errs = {
        "gamma_c": rel(mt.gamma_c, MT_GAMMA_C),
        "lambda_hat": rel(mt.lambda_hat, mp.mpf(MT_LAMBDA_HAT[0]) / MT_LAMBDA_HAT[1]),
        "b_hat": rel(mt.b_hat, MT_B_HAT),
        "xi_bar": rel(mt.xi_bar, MT_XI_BAR),
        "M_c": rel(mt.M_c, MT_M_C),
        "omega": rel(row.omega, mp.mpf(MT_OMEGA_MID)),
        "M": rel(row.M, MT_M_MID),
    }
    worst = max(errs.values())
    ok = worst < 1e-12
    record(7, ok, f"Meyn-Tweedie constants for (0.5, 1, 2) vs frozen hand values: max rel err {worst:.1e} (tol 1e-12)")
    assert ok


def test_08_v_uniform_end_to_end(record):
    start = time.perf_counter()
    cfg = load_config(str(CONFIGS / "oscillator.json"))
    rep = compute_bounds(cfg.model, cfg.drift, cfg.bounds, rng=cfg.seed)
    xs = cfg.simulation["x_list"]
    curves = linear_tv_curves(cfg.model, cfg.drift, scaled_bound(rep), xs, LADDER, rng=cfg.seed)
    negative = linear_tv_curves(cfg.model, cfg.drift, scaled_bound(rep, 10.0), xs, LADDER, rng=cfg.seed,
                                label="negative")
    bound_ok = all(c.verdict for c in curves)
    neg_detected = any(not c.verdict for c in negative)
    elapsed = time.perf_counter() - start
    ok = bound_ok and neg_detected and elapsed < 600
    record(8, ok, f"OSC TV <= M V(x) exp(-omega t) + 3 SE on 10-point ladder: {bound_ok} "
                  f"(omega = {mp.nstr(rep.omega, 3)}, M = {mp.nstr(rep.M, 3)}); negative control 10 omega "
                  f"detected: {neg_detected}; {elapsed:.0f}s (< 600s)")
    assert ok


def test_09_uniform_two_chain(cub, cubic_report, record):
    start = time.perf_counter()
    rep = cubic_report
    u = rep.uniform
    positive = u is not None and u["delta"].delta > 0 and u["omega_hat"] > 0
    curve_ok = False
    if positive:
        curve = two_chain_experiment(*cub, lambda t: rep.uniform_bound(t, 2.0), ([-2.0], [2.0]),
                                     SimConfig(h=0.01, T_max=5.0, n_paths=20_000), LADDER, rng=11)
        curve_ok = curve.verdict
    elapsed = time.perf_counter() - start
    ok = positive and curve_ok and elapsed < 600
    detail = (f"delta = {mp.nstr(u['delta'].delta, 3)}, omega_hat = {mp.nstr(u['omega_hat'], 3)}" if u else "no uniform rate")
    record(9, ok, f"CUBIC two chains from -2/+2 under (1-delta)^-1 2 exp(-omega_hat t) + 3 SE: {curve_ok}; {detail}; "
                  f"{elapsed:.0f}s (< 600s)")
    assert ok


def test_10_spectral_gap_consistency(cub, cubic_report, record):
    rep = cubic_report
    acf = autocorrelation_rate(*cub, SimConfig(h=0.01, T_max=1.0, n_paths=2000), burn_in=10.0, horizon=20.0, rng=12)
    ok = rep.symmetric and mp.mpf(acf["rate"]) >= rep.omega
    record(10, ok, f"CUBIC (symmetric: {rep.symmetric}) empirical ACF decay rate {acf['rate']:.3f} >= certified "
                   f"omega {mp.nstr(rep.omega, 3)}")
    assert ok


def test_11_uniformity_over_drifts(cub, record):
    model = cub[0]
    d1 = cubic_drift(1.0, 0.0).with_constants(K=1.5, k2=17.5, k3=0.5)
    d2 = cubic_drift(1.0, 0.5)
    same_constants = all(getattr(d1, k) == getattr(d2, k) for k in ("K", "m", "k1", "k2", "k3", "s", "eps"))
    distinct = not np.allclose(d1(np.array([[1.0]])), d2(np.array([[1.0]])))
    settings = BoundSettings(uniform=False)
    r1 = canonical_json(compute_bounds(model, d1, settings, rng=13).rate_section())
    r2 = canonical_json(compute_bounds(model, d2, settings, rng=13).rate_section())
    ok = same_constants and distinct and r1.encode() == r2.encode()
    record(11, ok, f"two distinct drifts with equal (K, m, k1, k2, k3, s): byte-identical (omega, M) reports: "
                   f"{r1.encode() == r2.encode()}")
    assert ok


def test_12_parameter_continuity(record):
    start = time.perf_counter()
    cfg = load_config(str(CONFIGS / "cubic_sweep.json"))
    s = cfg.simulation
    sim = SimConfig(h=s["h"], T_max=1.0, n_paths=s["n_paths"])
    res = parameter_sweep(cfg.model, cubic_family(), s["alphas"], s["alpha0"], sim, s["burn_in"], rng=cfg.seed,
                          nbins=s["nbins"])
    elapsed = time.perf_counter() - start
    ok = res.monotone and res.at_floor
    tv = ", ".join(f"{a:g}: {v:.4f}" for a, v in zip(res.alphas, res.tv))
    record(12, ok, f"CUBIC family TV(mu_alpha, mu_0) [{tv}] decreasing: {res.monotone}; closest within noise floor "
                   f"{res.noise_floor.tv:.4f}: {res.at_floor}; {elapsed:.0f}s")
    assert ok
