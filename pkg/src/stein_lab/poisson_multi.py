"""Multivariate Poisson ``Po(lam mu)`` on a truncated box.

The Stein operator is the generator of ``d`` independent immigration-death
coordinates (immigration ``lam mu_i``, per-capita death 1).  The perturbed
chain adds rate-1/2 moves around the corner ``K = floor(lam mu)``:

* at ``K + e2``: one more birth in coordinate 1 and one more death in coordinate 2;
* at ``K + e1``: one more birth in coordinate 2 and one more death in coordinate 1.

With ``mu_1 == mu_2`` the stationary law is symmetric in the first two
coordinates and ``E A g(W) = -P[W = K + e1] Delta_12 g(K)`` for every ``g``.
Coordinates are 0-based in code: "coordinate 1" above is index 0.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .ctmc import (Generator, ProbVec, SteinSolution, assemble_rates, center, perturb,
                   solve_stein, stationary_shift, stein_covector)
from .distances import tv
from .fitting import spread
from .state_space import BoxSpace, default_truncation

__all__ = [
    "MultiProblem",
    "product_poisson",
    "multi_operator",
    "delta_ij",
    "delta12",
    "mixed_difference_covector",
    "stein_solution_multi",
    "quadrant_indicator",
    "lower_bound_threshold",
    "LowerBoundReport",
    "check_mixed_difference_lower_bound",
    "quadrant_mixed_differences",
    "UniformBoundReport",
    "uniform_bound_rhs",
    "mixed_difference_bound",
    "check_uniform_bound",
    "perturbed_multi",
    "perturbed_law",
    "IdentityReport",
    "verify_stein_identity",
    "mean_shift",
    "sup_delta12",
    "sup_delta12_covector",
    "tv_rate_table",
]


def _log_plus(x: float) -> float:
    return max(math.log(x), 0.0) if x > 0 else 0.0


@dataclass(frozen=True)
class MultiProblem:
    """``Po(lam mu)`` on a box, with the corner ``K = floor(lam mu)``."""

    lam: float
    mu: tuple = (0.5, 0.5)
    n_max: tuple | None = None
    space: BoxSpace = field(init=False, compare=False, repr=False)
    K: tuple = field(init=False, compare=False)

    def __post_init__(self):
        mu = tuple(float(m) for m in self.mu)
        if len(mu) < 2:
            raise ValueError("need d >= 2")
        if min(mu) <= 0 or abs(sum(mu) - 1.0) > 1e-12:
            raise ValueError(f"mu must be a positive probability vector, got {mu}")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        lam = float(self.lam)
        n_max = (tuple(default_truncation(lam * m) for m in mu)
                 if self.n_max is None else tuple(int(v) for v in self.n_max))
        if len(n_max) != len(mu):
            raise ValueError("n_max and mu differ in length")
        K = tuple(int(math.floor(lam * m)) for m in mu)
        for i in (0, 1):
            if K[i] + 2 > n_max[i]:
                raise ValueError(f"corner K={K} too close to the box edge in coordinate {i}")
        if any(k > n for k, n in zip(K, n_max)):
            raise ValueError(f"corner K={K} outside the box {n_max}")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "n_max", n_max)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "space", _box(n_max))

    @property
    def d(self) -> int:
        return len(self.mu)

    @property
    def means(self) -> np.ndarray:
        return self.lam * np.asarray(self.mu)

    def corner_plus(self, i: int) -> tuple:
        w = list(self.K)
        w[i] += 1
        return tuple(w)


@lru_cache(maxsize=32)
def _box(n_max: tuple) -> BoxSpace:
    return BoxSpace(n_max)


@lru_cache(maxsize=32)
def product_poisson(problem: MultiProblem) -> ProbVec:
    """Truncated product law ``Po(lam mu_1) x ... x Po(lam mu_d)`` on the box."""
    W = problem.space.counts
    logp = (W * np.log(problem.means) - gammaln(W + 1)).sum(axis=1)
    p = np.exp(logp - logp.max())
    return ProbVec(problem.space, p / p.sum())


@lru_cache(maxsize=32)
def multi_operator(problem: MultiProblem) -> Generator:
    W = problem.space.counts
    rates = {}
    for i, m in enumerate(problem.means):
        rates[(i, +1)] = np.full(problem.space.size, m)
        rates[(i, -1)] = W[:, i].astype(float)
    return assemble_rates(problem.space, rates)


def delta_ij(g, i: int, j: int, w, space: BoxSpace | None = None) -> float:
    """``g(w+e_i+e_j) - g(w+e_i) - g(w+e_j) + g(w)``."""
    if isinstance(g, SteinSolution):
        space, vals = g.space, g.values
    else:
        vals = np.asarray(g)
    w = np.asarray(w, dtype=np.int64)
    ei = np.eye(space.d, dtype=np.int64)[i]
    ej = np.eye(space.d, dtype=np.int64)[j]
    corner = tuple(w + ei + ej)
    if corner not in space or tuple(w) not in space:
        raise IndexError(f"{tuple(w)} + e_{i} + e_{j} leaves the box")
    at = lambda x: vals[space.index(tuple(x))]
    return float(at(w + ei + ej) - at(w + ei) - at(w + ej) + at(w))


def delta12(g, w, space: BoxSpace | None = None) -> float:
    return delta_ij(g, 0, 1, w, space)


def mixed_difference_covector(space: BoxSpace, w, i: int = 0, j: int = 1) -> np.ndarray:
    """Vector ``ell`` with ``<ell, g> = Delta_ij g(w)``."""
    w = np.asarray(w, dtype=np.int64)
    ei = np.eye(space.d, dtype=np.int64)[i]
    ej = np.eye(space.d, dtype=np.int64)[j]
    ell = np.zeros(space.size)
    for x, s in ((w + ei + ej, 1.0), (w + ei, -1.0), (w + ej, -1.0), (w, 1.0)):
        ell[space.index(tuple(x))] += s
    return ell


def stein_solution_multi(problem: MultiProblem, h: np.ndarray) -> SteinSolution:
    """Solution of ``A g = h - E h(Z)`` with ``g(0) = 0`` (``h`` may be 2-d)."""
    pi0 = product_poisson(problem)
    return solve_stein(multi_operator(problem), center(h, pi0), pi0)


def quadrant_indicator(problem: MultiProblem, upper1: bool = False,
                       upper2: bool = False) -> np.ndarray:
    """Indicator of a quadrant with corner ``(m_1, m_2)`` in the first two coordinates.

    ``upper=False`` selects ``w_i <= m_i``, ``True`` selects ``w_i >= m_i + 1``;
    both ``False`` gives the set ``A_1``.
    """
    W = problem.space.counts
    m1, m2 = problem.K[0], problem.K[1]
    s1 = W[:, 0] > m1 if upper1 else W[:, 0] <= m1
    s2 = W[:, 1] > m2 if upper2 else W[:, 1] <= m2
    return (s1 & s2).astype(float)


def lower_bound_threshold(mu) -> float:
    """Smallest ``lam`` for which the mixed-difference lower bound is proved."""
    return (math.e / (32.0 * math.pi)) * min(mu[0], mu[1]) ** -2


@dataclass
class LowerBoundReport:
    computed: float
    bound: float
    ok: bool
    applicable: bool
    w: tuple


def check_mixed_difference_lower_bound(problem: MultiProblem, w=None) -> LowerBoundReport:
    """``|Delta_12 g_{A_1}(w)| >= log(lam) / (20 lam sqrt(mu_1 mu_2))``.

    ``w`` defaults to ``K``; only ``(w_1, w_2) = (m_1, m_2)`` is covered by
    the bound.  Below the validity threshold the report is marked
    inapplicable instead of failing.
    """
    lam, mu = problem.lam, problem.mu
    w = problem.K if w is None else tuple(w)
    if (w[0], w[1]) != (problem.K[0], problem.K[1]):
        raise ValueError("the bound concerns w with (w_1, w_2) = (m_1, m_2)")
    bound = math.log(lam) / (20.0 * lam * math.sqrt(mu[0] * mu[1]))
    g = stein_solution_multi(problem, quadrant_indicator(problem))
    computed = abs(delta12(g, w))
    applicable = lam >= lower_bound_threshold(mu)
    return LowerBoundReport(computed, bound, (computed >= bound) if applicable else True,
                            applicable, w)


def quadrant_mixed_differences(problem: MultiProblem, w=None) -> dict:
    """``Delta_12 g_A(w)`` for the four quadrants ``A`` with corner ``(m_1, m_2)``.

    Keyed by ``(upper1, upper2)``; ``(False, False)`` is ``A_1``.  Reported
    for sign and scale comparison only.
    """
    w = problem.K if w is None else tuple(w)
    keys = list(itertools.product((False, True), repeat=2))
    H = np.column_stack([quadrant_indicator(problem, u1, u2) for u1, u2 in keys])
    G = stein_solution_multi(problem, H).values
    ell = mixed_difference_covector(problem.space, w)
    return {key: float(ell @ G[:, n]) for n, key in enumerate(keys)}


def uniform_bound_rhs(problem: MultiProblem, alpha) -> float:
    """``min{(1 + 2 log+(2 lam)) / (2 lam) sum alpha_i^2/mu_i, sum alpha_i^2}``."""
    a = np.asarray(alpha, dtype=float)
    lam = problem.lam
    first = (1.0 + 2.0 * _log_plus(2.0 * lam)) / (2.0 * lam) * float(np.sum(a ** 2 / np.asarray(problem.mu)))
    return min(first, float(np.sum(a ** 2)))


def mixed_difference_bound(problem: MultiProblem) -> float:
    """Upper bound on ``|Delta_12 g_h|`` implied by the uniform bound."""
    lam, mu = problem.lam, problem.mu
    return (1.0 + 2.0 * _log_plus(2.0 * lam)) * (mu[0] + mu[1]) / (2.0 * lam * mu[0] * mu[1])


def _second_differences(values: np.ndarray, shape: tuple, alpha) -> np.ndarray:
    """``sum_ij alpha_i alpha_j Delta_ij g`` on the safe interior (``w_i <= n_i - 2``)."""
    g = values.reshape(shape)
    d = len(shape)
    inner = tuple(slice(0, n - 2) for n in shape)
    out = np.zeros(tuple(n - 2 for n in shape))

    def shifted(*coords):
        sl = []
        for axis, n in enumerate(shape):
            off = sum(1 for c in coords if c == axis)
            sl.append(slice(off, n - 2 + off))
        return g[tuple(sl)]

    base = g[inner]
    for i in range(d):
        for j in range(d):
            if alpha[i] == 0 or alpha[j] == 0:
                continue
            out += alpha[i] * alpha[j] * (shifted(i, j) - shifted(i) - shifted(j) + base)
    return out


@dataclass
class UniformBoundReport:
    lhs: float
    rhs: float
    ok: bool


def check_uniform_bound(problem: MultiProblem, alpha, sets=None) -> UniformBoundReport:
    """Check ``||sum_ij alpha_i alpha_j Delta_ij g_A|| <= rhs`` over a family of sets.

    The norm is taken over the part of the box where every difference is
    defined.  ``sets`` defaults to the four quadrants with corner
    ``(m_1, m_2)`` and the singleton ``{K}``.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (problem.d,):
        raise ValueError(f"alpha must have length {problem.d}")
    rhs = uniform_bound_rhs(problem, alpha)
    if not np.any(alpha):
        return UniformBoundReport(0.0, rhs, True)
    if sets is None:
        sets = [quadrant_indicator(problem, u1, u2)
                for u1, u2 in itertools.product((False, True), repeat=2)]
        single = np.zeros(problem.space.size)
        single[problem.space.index(problem.K)] = 1.0
        sets.append(single)
    H = np.column_stack(sets)
    G = stein_solution_multi(problem, H).values
    lhs = 0.0
    for col in range(G.shape[1]):
        dd = _second_differences(G[:, col], problem.space.shape, alpha)
        lhs = max(lhs, float(np.abs(dd).max()))
    return UniformBoundReport(lhs, rhs, lhs <= rhs)


@lru_cache(maxsize=32)
def perturbed_multi(problem: MultiProblem) -> Generator:
    if problem.mu[0] != problem.mu[1]:
        raise ValueError("symmetry condition violated: mu_1 != mu_2")
    k1 = problem.corner_plus(0)
    k2 = problem.corner_plus(1)
    extra = [
        (k2, (0, +1), 0.5),
        (k1, (1, +1), 0.5),
        (k1, (0, -1), 0.5),
        (k2, (1, -1), 0.5),
    ]
    return perturb(multi_operator(problem), extra)


@lru_cache(maxsize=32)
def perturbed_law(problem: MultiProblem) -> ProbVec:
    """Stationary law of the perturbed chain, as a shift of the product law."""
    return stationary_shift(perturbed_multi(problem), product_poisson(problem))


@dataclass
class IdentityReport:
    lhs: float
    rhs: float
    abs_err: float
    rel_err: float


def _identity_report(lhs: float, rhs: float) -> IdentityReport:
    err = abs(lhs - rhs)
    return IdentityReport(lhs, rhs, err, err / abs(rhs) if rhs != 0 else err)


def verify_stein_identity(problem: MultiProblem, g: np.ndarray) -> IdentityReport:
    """``E A g(W)`` against ``-P[W = K + e1] Delta_12 g(K)``.

    ``rel_err`` falls back to the absolute error when the right side is 0.
    """
    g = np.asarray(g, dtype=float)
    law = perturbed_law(problem)
    lhs = law.expect(multi_operator(problem).apply(g))
    p = law[problem.corner_plus(0)]
    rhs = -p * delta12(g, problem.K, problem.space)
    return _identity_report(lhs, rhs)


def mean_shift(problem: MultiProblem) -> np.ndarray:
    """``E W - lam mu`` under the perturbed law, per coordinate."""
    law = perturbed_law(problem)
    W = problem.space.counts.astype(float)
    return np.array([law.expect(W[:, i]) for i in range(problem.d)]) - problem.means


def sup_delta12_covector(problem: MultiProblem, w=None) -> np.ndarray:
    """``c`` with ``Delta_12 g_h(w) = <c, h>`` for every ``h``, from one adjoint solve."""
    w = problem.K if w is None else w
    ell = mixed_difference_covector(problem.space, w)
    return stein_covector(multi_operator(problem), ell, product_poisson(problem))


def sup_delta12(problem: MultiProblem, w=None) -> float:
    """``sup_{h in H_TV} |Delta_12 g_h(w)|`` (default ``w = K``)."""
    return 0.5 * float(np.abs(sup_delta12_covector(problem, w)).sum())


def tv_rate_table(problems) -> dict:
    """Per-instance distance and identity error, with the bounds as extra columns."""
    rows = []
    for pr in problems:
        law = perturbed_law(pr)
        ref = product_poisson(pr)
        d_tv = tv(law, ref)
        p = law[pr.corner_plus(0)]
        s = sup_delta12(pr)
        lb = check_mixed_difference_lower_bound(pr)
        lam = pr.lam
        rows.append({
            "lambda": lam,
            "m1": pr.K[0],
            "p": p,
            "d_tv": d_tv,
            "sup_d12": s,
            "rel_err": abs(d_tv - p * s) / (p * s),
            "lb_computed": lb.computed,
            "lb_bound": lb.bound,
            "lb_ok": lb.ok,
            "applicable": lb.applicable,
            "sup_lower": math.log(lam) / (20.0 * lam * math.sqrt(pr.mu[0] * pr.mu[1])),
            "sup_upper": mixed_difference_bound(pr),
            "scaled": d_tv * lam / (p * math.log(lam)) if lam > 1 else float("nan"),
            "leak": law.leak,
        })
    return {"rows": rows, "spread_scaled": spread([r["scaled"] for r in rows])}
