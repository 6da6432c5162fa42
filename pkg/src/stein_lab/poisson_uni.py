"""Univariate Poisson: Stein solutions and the perturbed chain ``W_k``.

The Stein equation is ``lam g(j+1) - j g(j) = h(j) - E h(Z)`` with
``Z ~ Po(lam)`` truncated to ``{0, ..., n_max}``.  Solutions are gauged by
``g(0) = g(1)``, so ``Delta g(0) = 0``.

``W_k`` is the stationary law of the immigration-death chain whose
immigration rate at ``k`` is raised to ``lam + 1`` and whose total death
rate at ``k`` is raised to ``k + 1``.  Its distance to ``Po(lam)`` is

    d_TV(W_k, Po(lam)) = P[W_k = k] * sup_h |Delta g_h(k)|,

which this module evaluates along two independent routes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gammaln
from scipy.stats import poisson

from .ctmc import (Generator, ProbVec, SteinSolution, assemble_rates, perturb,
                   stationary_shift)
from .distances import tv
from .fitting import spread
from .state_space import UniSpace, default_truncation

__all__ = [
    "UniProblem",
    "uni_space",
    "poisson_pmf",
    "immigration_death",
    "stein_solution_uni",
    "stein_operator_uni",
    "stein_factor_bounds",
    "sup_delta_g",
    "delta_g_covector",
    "perturbed_uni",
    "perturbed_law",
    "TVIdentityReport",
    "verify_tv_identity",
    "ratio_profile",
    "tv_rate_table",
]


@lru_cache(maxsize=64)
def uni_space(n_max: int) -> UniSpace:
    return UniSpace(n_max)


@dataclass(frozen=True)
class UniProblem:
    """Perturbation of ``Po(lam)`` at location ``k`` (default ``max(floor(lam), 1)``)."""

    lam: float
    k: int | None = None
    n_max: int | None = None
    space: UniSpace = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        n_max = default_truncation(self.lam) if self.n_max is None else int(self.n_max)
        k = max(int(math.floor(self.lam)), 1) if self.k is None else int(self.k)
        if k < 1:
            raise ValueError("k must be a positive integer")
        if k > n_max - 1:
            raise ValueError(f"k={k} must lie below the truncation n_max={n_max}")
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "n_max", n_max)
        object.__setattr__(self, "space", uni_space(n_max))


def poisson_pmf(lam: float, space: UniSpace) -> ProbVec:
    """``Po(lam)`` restricted to ``space`` and renormalised.

    ``tail_mass`` holds ``P[Z > n_max]`` before renormalisation.
    """
    j = np.arange(space.n_max + 1)
    logp = j * math.log(lam) - gammaln(j + 1)
    p = np.exp(logp - logp.max())
    p /= p.sum()
    return ProbVec(space, p, tail_mass=float(poisson.sf(space.n_max, lam)))


@lru_cache(maxsize=128)
def _pmf_cached(lam: float, n_max: int) -> ProbVec:
    return poisson_pmf(lam, uni_space(n_max))


def immigration_death(lam: float, space: UniSpace) -> Generator:
    """Immigration rate ``lam``, per-capita death rate 1."""
    j = np.arange(space.size, dtype=float)
    return assemble_rates(space, {(0, +1): np.full(space.size, float(lam)), (0, -1): j})


def stein_solution_uni(lam: float, h: np.ndarray, space: UniSpace) -> SteinSolution:
    """Solve ``lam g(j+1) - j g(j) = h(j) - E h(Z)`` for ``0 <= j < n_max``.

    With ``p`` the truncated pmf, ``g(j+1) = T(j) / lam`` where
    ``T(j) = sum_{i<=j} (p_i/p_j) (h(i) - E h)``.  ``T`` is run forward
    (``T(j) = T(j-1) j/lam + r_j``) below ``lam`` and, using the centring
    ``sum_i p_i r_i = 0``, backward (``T(j) = lam/(j+1) (T(j+1) - r_{j+1})``)
    above it.  Each direction multiplies by a factor below one, so neither
    overflows nor amplifies rounding.  ``h`` may carry one test function per
    column.
    """
    lam = float(lam)
    p = _pmf_cached(lam, space.n_max).values
    h = np.asarray(h, dtype=float)
    r = h - p @ h
    n = space.n_max
    lo = np.empty_like(r)
    hi = np.empty_like(r)
    lo[0] = r[0]
    for j in range(1, n + 1):
        lo[j] = lo[j - 1] * (j / lam) + r[j]
    hi[n] = 0.0
    for j in range(n - 1, -1, -1):
        hi[j] = (lam / (j + 1)) * (hi[j + 1] - r[j + 1])
    below = np.arange(n + 1) < lam
    if r.ndim > 1:
        below = below[:, None]
    T = np.where(below, lo, hi)
    g = np.empty_like(r)
    g[1:] = T[:-1] / lam
    g[0] = g[1]
    return SteinSolution(space, g, gauge_state=0)


def stein_operator_uni(lam: float, g: np.ndarray, g_next: float = 0.0) -> np.ndarray:
    """``lam g(j+1) - j g(j)`` on ``{0, ..., n}``; ``g_next`` stands for ``g(n+1)``."""
    g = np.asarray(g, dtype=float)
    ext = np.append(g, g_next)
    return lam * ext[1:] - np.arange(len(g)) * g


def stein_factor_bounds(lam: float) -> tuple[float, float]:
    """Bounds on ``||g_h||`` and ``||Delta g_h||`` valid for every indicator ``h``."""
    return min(1.0, math.sqrt(2.0 / (lam * math.e))), (1.0 - math.exp(-lam)) / lam


def delta_g_covector(lam: float, k: int, space: UniSpace) -> np.ndarray:
    """``c_j = Delta g_{delta_j}(k)``, so that ``Delta g_h(k) = sum_j c_j h(j)``."""
    if not 1 <= k <= space.n_max - 1:
        raise ValueError(f"need 1 <= k <= n_max - 1, got k={k}")
    G = stein_solution_uni(lam, np.eye(space.size), space).values
    return G[k + 1] - G[k]


def sup_delta_g(lam: float, k: int, space: UniSpace) -> float:
    """``sup_{h in H_TV} |Delta g_h(k)|``.

    The map ``h -> Delta g_h(k)`` is linear and kills constants, so over
    indicators its supremum is the sum of the positive coefficients, which
    equals half the l1 norm.
    """
    return 0.5 * float(np.abs(delta_g_covector(lam, k, space)).sum())


def perturbed_uni(problem: UniProblem) -> Generator:
    """Immigration-death chain with rates ``lam + 1`` (up) and ``k + 1`` (down) at ``k``."""
    base = _base_cached(problem.lam, problem.n_max)
    k = problem.k
    return perturb(base, [(k, (0, +1), 1.0), (k, (0, -1), 1.0)])


@lru_cache(maxsize=128)
def _base_cached(lam: float, n_max: int) -> Generator:
    return immigration_death(lam, uni_space(n_max))


def perturbed_law(problem: UniProblem) -> ProbVec:
    """Stationary law of ``W_k``, stored as a shift of the truncated ``Po(lam)``."""
    ref = _pmf_cached(problem.lam, problem.n_max)
    return stationary_shift(perturbed_uni(problem), ref)


@dataclass
class TVIdentityReport:
    lam: float
    k: int
    lhs: float
    rhs: float
    rel_err: float
    p_k: float
    sup_dg: float
    leak: float


def verify_tv_identity(problem: UniProblem) -> TVIdentityReport:
    """Compare ``d_TV(W_k, Po(lam))`` with ``P[W_k = k] sup_h |Delta g_h(k)|``.

    The left side comes from the stationary shift and ``tv``; the right side
    from the forward Stein recursion.  Only ``P[W_k = k]`` is shared.
    """
    law = perturbed_law(problem)
    ref = _pmf_cached(problem.lam, problem.n_max)
    lhs = tv(law, ref)
    p_k = ref.values[problem.k] + law.deviation[problem.k]
    s = sup_delta_g(problem.lam, problem.k, problem.space)
    rhs = p_k * s
    return TVIdentityReport(problem.lam, problem.k, lhs, rhs, abs(lhs - rhs) / rhs,
                            p_k, s, law.leak)


def ratio_profile(lam: float, space: UniSpace | None = None) -> np.ndarray:
    """``d_TV(W_k, Po(lam)) / P[W_k = k]`` for ``k = 1, ..., n_max - 1``."""
    if space is None:
        space = uni_space(default_truncation(lam))
    out = np.empty(space.n_max - 1)
    ref = _pmf_cached(float(lam), space.n_max)
    for k in range(1, space.n_max):
        law = perturbed_law(UniProblem(lam, k, space.n_max))
        out[k - 1] = tv(law, ref) / (ref.values[k] + law.deviation[k])
    return out


def tv_rate_table(lambda_grid) -> dict:
    """Per-``lam`` values at ``k = floor(lam)`` plus spreads of the scaled columns.

    ``P[W_k=k] sqrt(lam)`` is a numerical look at an unproven heuristic; it
    is reported, not asserted.
    """
    rows = []
    for lam in lambda_grid:
        rep = verify_tv_identity(UniProblem(lam))
        rows.append({
            "lambda": rep.lam,
            "k": rep.k,
            "p_k": rep.p_k,
            "d_tv": rep.lhs,
            "sup_dg": rep.sup_dg,
            "rel_err": rep.rel_err,
            "leak": rep.leak,
            "sup_dg_scaled": rep.sup_dg * rep.lam,
            "d_tv_scaled": rep.lhs * rep.lam ** 1.5,
            "p_k_scaled": rep.p_k * math.sqrt(rep.lam),
        })
    return {
        "rows": rows,
        "spread_sup_dg": spread([r["sup_dg_scaled"] for r in rows]),
        "spread_d_tv": spread([r["d_tv_scaled"] for r in rows]),
        "spread_p_k": spread([r["p_k_scaled"] for r in rows]),
    }
