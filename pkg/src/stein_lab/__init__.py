"""Exact Stein-solution and perturbed-chain computations on truncated state spaces."""

from .ctmc import (Generator, ProbVec, SteinSolution, assemble, assemble_rates, perturb,
                   simulate, solve_stein, stationary, stationary_shift)
from .distances import d1, d2_exact, d2_lower_bound, tv
from .fitting import RateFit, fit_rate, spread
from .state_space import BoxSpace, Carrier, ConfigSpace, UniSpace

__version__ = "0.1.0"

__all__ = [
    "BoxSpace", "Carrier", "ConfigSpace", "UniSpace",
    "Generator", "ProbVec", "SteinSolution",
    "assemble", "assemble_rates", "perturb", "simulate", "solve_stein",
    "stationary", "stationary_shift",
    "d1", "d2_exact", "d2_lower_bound", "tv",
    "RateFit", "fit_rate", "spread",
]
