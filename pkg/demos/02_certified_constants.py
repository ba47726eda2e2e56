"""From a density lower bound to certified convergence rates.

The chain is: bridge moment constants -> pointwise minorant l(x, y) -> small-set
mass delta -> Meyn-Tweedie constants -> (omega, M). For the cubic drift the
uniform rate omega_hat = -log(1 - delta)/2 is also available.

The numbers are honest but tiny: delta sits far below double precision, so every
constant is carried as an mpmath number.

Run:  python3 demos/02_certified_constants.py
"""
import mpmath as mp

from ergobound import BoundSettings, compute_bounds, mt_constants, uniform_rate
from ergobound.presets import cubic, oscillator

# %% Meyn-Tweedie arithmetic on friendly inputs
mt = mt_constants(0.5, 1, 2)
print("gamma_c =", mt.gamma_c, " b_hat =", mt.b_hat, " M_c =", mt.M_c)
print("uniform rate at delta = 1/2:", uniform_rate(0.5))

# %% the full pipeline, small budgets for a quick run
fast = BoundSettings(moment_budget=5000, k_budget=50_000, n_delta=20_000)
for name, (model, drift) in {"cubic": cubic(), "oscillator": oscillator()}.items():
    rep = compute_bounds(model, drift, fast, rng=0)
    print(f"\n== {name}")
    print(f"ultimate bound k0={rep.ultimate.k0:.3f} k1={rep.ultimate.k1:.3f} c_hat={rep.ultimate.c_hat:.3f} ({rep.ultimate.source})")
    print(f"small set R={rep.small_set.R:.3g}, r={rep.small_set.r:.3g}, T={rep.small_set.T:.3g}")
    print(f"log delta = {rep.delta.log_delta:.4g} ({rep.delta.method})")
    print(f"omega = {mp.nstr(rep.omega, 5)}, M = {mp.nstr(rep.M, 5)}")
    if rep.uniform:
        print(f"omega_hat = {mp.nstr(rep.uniform['omega_hat'], 5)}")
    for k, v in rep.gap.items():
        print(f"  gap {k}: {mp.nstr(v, 5)}")
