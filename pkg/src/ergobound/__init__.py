"""Certified transition-density lower bounds and ergodicity constants for semilinear SDEs.

The package models ``dX = (AX + Q^{1/2} G(X)) dt + Q^{1/2} dW`` on R^d. Its
linear part is an Ornstein-Uhlenbeck process; transition densities are written
as OU-bridge expectations (Girsanov), bounded from below, and turned into
small-set constants and Meyn-Tweedie convergence rates.
"""
from .linop import LinearModel, ModelError, gramian, semigroup
from .bridge import TimeGrid, BridgeKernel, build_bridge_kernel
from .drift import DriftSpec
from .rng import RandomStream
from .ergodicity import UltimateBound, mt_constants, uniform_rate
from .pipeline import BoundReport, BoundSettings, compute_bounds
from .presets import preset

__all__ = [
    "LinearModel", "ModelError", "gramian", "semigroup",
    "TimeGrid", "BridgeKernel", "build_bridge_kernel",
    "DriftSpec", "RandomStream",
    "UltimateBound", "mt_constants", "uniform_rate",
    "BoundReport", "BoundSettings", "compute_bounds", "preset",
]
__version__ = "0.1.0"
