"""Empirical convergence against the certified bounds.

For the damped oscillator the laws are Gaussian, so TV(P_t delta_x, mu*) is
computed from the exact laws (Monte Carlo over the likelihood ratio, no path
simulation); it is not monotone in t because the oscillator is underdamped.
For the cubic drift two chains from -2 and +2 are compared by histogram TV. The certified bounds are valid but
very loose; the printout shows by how much.

Run:  python3 demos/03_ergodicity_curves.py
"""
import numpy as np
import mpmath as mp

from ergobound import BoundSettings, compute_bounds
from ergobound.pipeline import linear_tv_curves, scaled_bound
from ergobound.presets import cubic, oscillator
from ergobound.sim import SimConfig, two_chain_experiment

times = np.linspace(0.5, 5.0, 10)
fast = BoundSettings(moment_budget=5000, k_budget=50_000, n_delta=20_000)

model, drift = oscillator()
rep = compute_bounds(model, drift, fast, rng=0)
(curve,) = linear_tv_curves(model, drift, scaled_bound(rep), [[2.0, 0.0]], times, rng=1, n_mc=50_000)
print("oscillator from (2, 0):   t      TV       bound")
for t, tv, se, b in curve.rows():
    print(f"                      {t:5.2f}  {tv:.4f}   {mp.nstr(b, 4)}")

model, drift = cubic()
rep = compute_bounds(model, drift, fast, rng=0)
curve = two_chain_experiment(model, drift, lambda t: rep.uniform_bound(t), ([-2.0], [2.0]),
                             SimConfig(h=0.01, T_max=5.0, n_paths=10_000), times, rng=2)
print("\ncubic chains -2 vs +2:    t      TV       bound")
for t, tv, se, b in curve.rows():
    print(f"                      {t:5.2f}  {tv:.4f}   {mp.nstr(b, 4)}")
print("verdict:", curve.verdict)
