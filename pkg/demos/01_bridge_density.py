"""Transition densities through OU bridges.

Walk-through on the scalar model dX = -X dt + G(X) dt + dW. With G(x) = -x the
process is again Gaussian, so the bridge/Girsanov estimate can be compared to
the exact density; with G(x) = -x^3 it is compared to a kernel density estimate.

Run:  python3 demos/01_bridge_density.py
"""
import numpy as np
from scipy import stats

from ergobound import build_bridge_kernel, TimeGrid
from ergobound.girsanov import transition_density, kde_oracle_density, martingale_check
from ergobound.presets import scalar1, cubic

# %% the OU part and its bridge tables
model, lin = scalar1(feedback=-1.0)        # total drift -2x
kernel = build_bridge_kernel(model, TimeGrid(M=256, eps_end=1e-3))
print("S_1 =", kernel.S1[0, 0], " Q_1 =", kernel.G1.Qt[0, 0])
print("bridge mean from 1 to 0 at t=1/2:", kernel.bridge_mean([1.0], [0.0])[128, 0])

# %% the Girsanov weight is a mean-one martingale
s = martingale_check(model, lin, [0.0], n_paths=20_000, rng=1)
print(f"E exp(rho) = {s.mean:.4f} +- {s.stderr:.4f}")

# %% density of X_1 started at x, on a few y values
var = (1 - np.exp(-4.0)) / 4
for x, y in [(0, 0), (1, 0), (-1, 1)]:
    est = transition_density(kernel, lin, [x], [y], n_paths=20_000, rng=2)
    exact = stats.norm.pdf(y, np.exp(-2.0) * x, np.sqrt(var))
    print(f"p(1, {x:+d}, {y:+d}): bridge MC {est.value:.4f} +- {est.stderr:.4f}   exact {exact:.4f}")

# %% a genuinely nonlinear drift: G(x) = -x^3
model, cub = cubic()
kernel = build_bridge_kernel(model, TimeGrid(M=256, eps_end=1e-3))
for y in (-0.5, 0.0, 0.5):
    est = transition_density(kernel, cub, [1.0], [y], n_paths=20_000, rng=3)
    kde = kde_oracle_density(model, cub, [1.0], [y], n_paths=50_000, rng=4)
    print(f"cubic p(1, 1, {y:+.1f}): bridge MC {est.value:.4f} +- {est.stderr:.4f}   KDE {kde.value:.4f} +- {kde.stderr:.4f}")
