"""Conservative generators on truncated spaces and the linear algebra around them.

A :class:`Generator` is a sparse rate matrix ``Q`` with zero row sums.  Rows
are "from" states, so a distribution ``pi`` is stationary when ``pi @ Q == 0``
and the Stein/Poisson equation for a function ``g`` reads ``Q @ g == rhs``.

Truncation is reflecting: any transition whose target leaves the space is
dropped, and the dropped rate is kept per state in ``leak_rates``.

A perturbed generator keeps its unperturbed ``base`` and the exact sparse
``perturbation`` ``E = Q - Q_base``.  :func:`stationary_shift` uses them to
compute ``pi - pi_base`` directly, which is what makes total-variation
distances of order ``1e-20`` and below computable in double precision.
"""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .state_space import OUT_OF_RANGE, StateSpace

log = logging.getLogger(__name__)

__all__ = [
    "GeneratorError",
    "ReducibleChainError",
    "StationarySolveError",
    "SteinSolveError",
    "NotCenteredError",
    "Generator",
    "ProbVec",
    "SteinSolution",
    "assemble",
    "assemble_rates",
    "perturb",
    "gth_solve",
    "stationary",
    "stationary_shift",
    "leak",
    "center",
    "solve_stein",
    "stein_covector",
    "simulate",
    "GTH_MAX_STATES",
    "STATIONARY_RTOL",
    "STEIN_RTOL",
]

GTH_MAX_STATES = 3000
STATIONARY_RTOL = 1e-12
STEIN_RTOL = 1e-9
CENTERING_TOL = 1e-9

Move = tuple[int, int]


class GeneratorError(ValueError):
    pass


class ReducibleChainError(RuntimeError):
    pass


class StationarySolveError(RuntimeError):
    pass


class SteinSolveError(RuntimeError):
    pass


class NotCenteredError(ValueError):
    pass


@dataclass(eq=False)
class Generator:
    space: StateSpace
    Q: sp.csr_matrix
    leak_rates: np.ndarray
    base: "Generator | None" = None
    perturbation: sp.csr_matrix | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return self.Q.shape[0]

    @property
    def exit_rates(self) -> np.ndarray:
        return -self.Q.diagonal()

    @property
    def max_rate(self) -> float:
        return float(self.exit_rates.max(initial=0.0))

    def off_diagonal(self) -> sp.csr_matrix:
        off = (self.Q - sp.diags(self.Q.diagonal())).tocsr()
        off.eliminate_zeros()
        return off

    def rate(self, i: int, j: int) -> float:
        return float(self.Q[i, j])

    @property
    def is_irreducible(self) -> bool:
        if "irreducible" not in self._cache:
            off = self.off_diagonal()
            if off.nnz == 0:
                ok = self.size == 1
            else:
                n, _ = connected_components(off, directed=True, connection="strong")
                ok = n == 1
            self._cache["irreducible"] = ok
        return self._cache["irreducible"]

    def apply(self, g: np.ndarray) -> np.ndarray:
        """``(Q g)(x) = sum_y Q(x, y) (g(y) - g(x))``."""
        return self.Q @ g

    def row_sum_error(self) -> float:
        return float(np.abs(np.asarray(self.Q.sum(axis=1))).max(initial=0.0))


def _build_q(n: int, rows, cols, vals) -> sp.csr_matrix:
    off = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    off.sum_duplicates()
    diag = np.asarray(off.sum(axis=1)).ravel()
    return (off - sp.diags(diag)).tocsr()


def assemble_rates(space: StateSpace, move_rates: Mapping[Move, np.ndarray]) -> Generator:
    """Generator from per-move rate vectors (one entry per state)."""
    n = space.size
    rows, cols, vals = [], [], []
    leak_rates = np.zeros(n)
    for move, rate in move_rates.items():
        rate = np.broadcast_to(np.asarray(rate, dtype=float), (n,))
        if not np.all(np.isfinite(rate)):
            i = int(np.nonzero(~np.isfinite(rate))[0][0])
            raise GeneratorError(f"non-finite rate at state {space.state(i)!r}, move {move}")
        if np.any(rate < 0):
            i = int(np.nonzero(rate < 0)[0][0])
            raise GeneratorError(
                f"negative rate {rate[i]} at state {space.state(i)!r}, move {move}"
            )
        target = space.neighbor_indices(move)
        inside = target >= 0
        leak_rates[~inside] += rate[~inside]
        keep = inside & (rate > 0)
        rows.append(np.nonzero(keep)[0])
        cols.append(target[keep])
        vals.append(rate[keep])
    if rows:
        rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    Q = _build_q(n, rows, cols, vals)
    return Generator(space, Q, leak_rates)


def assemble(space: StateSpace, rate_rule: Callable[[object, Move], float]) -> Generator:
    """Generator from a ``rate_rule(state, move)`` callback.

    Targets outside the truncation are dropped and recorded as leak.
    """
    move_rates = {}
    for move in space.moves:
        rate = np.empty(space.size)
        for i in range(space.size):
            rate[i] = rate_rule(space.state(i), move)
        move_rates[move] = rate
    return assemble_rates(space, move_rates)


def perturb(base: Generator, extra: Iterable[tuple[object, Move, float]]) -> Generator:
    """Add extra transition rates ``(state, move, rate)`` to ``base``.

    The result remembers ``base`` and the exact perturbation matrix.
    """
    space = base.space
    n = space.size
    rows, cols, vals = [], [], []
    leak_rates = base.leak_rates.copy()
    for state, move, rate in extra:
        if rate < 0 or not math.isfinite(rate):
            raise GeneratorError(f"invalid extra rate {rate} at {state!r}, move {move}")
        i = space.index(state)
        target = space.neighbor(state, move)
        if target is OUT_OF_RANGE:
            raise GeneratorError(f"perturbation at {state!r}, move {move} leaves the space")
        rows.append(i)
        cols.append(space.index(target))
        vals.append(float(rate))
    E = _build_q(n, rows, cols, vals)
    E.eliminate_zeros()
    return Generator(space, (base.Q + E).tocsr(), leak_rates, base=base, perturbation=E)


@dataclass(eq=False)
class ProbVec:
    """Probability vector over a state space.

    ``deviation``, when set, holds ``values - reference.values`` computed
    without subtraction (see :func:`stationary_shift`).
    """

    space: StateSpace
    values: np.ndarray
    reference: "ProbVec | None" = None
    deviation: np.ndarray | None = None
    tail_mass: float = 0.0
    leak: float = float("nan")

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.space.size,):
            raise ValueError(f"expected {self.space.size} entries, got {v.shape}")
        if np.any(v < 0):
            raise ValueError(f"negative probability {v.min()}")
        if abs(v.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {v.sum()!r}")
        self.values = v

    def __getitem__(self, state) -> float:
        return float(self.values[self.space.index(state)])

    def expect(self, f: np.ndarray) -> float:
        """``E f`` under this law; split as ``E_ref f + <deviation, f>`` when possible."""
        f = np.asarray(f, dtype=float)
        if self.deviation is not None:
            return float(self.reference.values @ f + self.deviation @ f)
        return float(self.values @ f)


@dataclass(eq=False)
class SteinSolution:
    space: StateSpace
    values: np.ndarray
    gauge_state: int = 0
    residual: float = 0.0

    def __getitem__(self, state):
        return self.values[self.space.index(state)]

    def __add__(self, c: float) -> "SteinSolution":
        return SteinSolution(self.space, self.values + c, self.gauge_state, self.residual)


def gth_solve(Q) -> np.ndarray:
    """Stationary vector by Grassmann-Taksar-Heyman elimination.

    Only off-diagonal entries of ``Q`` are read, and no subtraction is ever
    performed, so small entries keep full relative accuracy.
    """
    A = np.array(Q.toarray() if sp.issparse(Q) else Q, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    np.fill_diagonal(A, 0.0)
    for k in range(n - 1, 0, -1):
        s = A[k, :k].sum()
        if s <= 0.0:
            raise ReducibleChainError(f"state {k} cannot reach lower-indexed states")
        A[:k, k] /= s
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])
    x = np.zeros(n)
    x[0] = 1.0
    for k in range(1, n):
        x[k] = x[:k] @ A[:k, k]
    return x / x.sum()


def _normalised_lu(Qt: sp.csc_matrix, row: int):
    A = Qt.tolil()
    A[row, :] = np.ones(Qt.shape[1])
    return spla.splu(A.tocsc())


def _sparse_stationary(gen: Generator) -> np.ndarray:
    n = gen.size
    Qt = gen.Q.T.tocsc()
    rhs = np.zeros(n)
    pi = None
    # second pass replaces the balance equation of the heaviest state
    for row in (0, None):
        if row is None:
            row = int(np.argmax(pi))
        rhs[:] = 0.0
        rhs[row] = 1.0
        lu = _normalised_lu(Qt, row)
        pi = lu.solve(rhs)
        for _ in range(2):
            r = -(Qt @ pi)
            r[row] = 1.0 - pi.sum()
            pi = pi + lu.solve(r)
    return pi


def leak(gen: Generator, pi: np.ndarray | ProbVec) -> float:
    """Stationary-weighted rate dropped at the truncation boundary."""
    v = pi.values if isinstance(pi, ProbVec) else pi
    return float(v @ gen.leak_rates)


def stationary(gen: Generator, method: str = "auto") -> ProbVec:
    """Stationary distribution ``pi Q = 0``, ``sum pi = 1``.

    ``method`` is ``"gth"`` (dense, subtraction-free), ``"sparse"`` (sparse
    LU with iterative refinement) or ``"auto"`` (GTH up to
    ``GTH_MAX_STATES`` states).
    """
    if not gen.is_irreducible:
        raise ReducibleChainError(f"generator on {gen.space!r} is not irreducible")
    if method == "auto":
        method = "gth" if gen.size <= GTH_MAX_STATES else "sparse"
    if method == "gth":
        pi = gth_solve(gen.Q)
    elif method == "sparse":
        pi = _sparse_stationary(gen)
    else:
        raise ValueError(f"unknown method {method!r}")
    resid = float(np.abs(pi @ gen.Q).max())
    scale = max(gen.max_rate, 1.0)
    if not np.all(np.isfinite(pi)) or resid > STATIONARY_RTOL * scale:
        raise StationarySolveError(
            f"stationary residual {resid:.3e} exceeds {STATIONARY_RTOL:g} x {scale:.3g}"
        )
    if pi.min() < -1e-14:
        raise StationarySolveError(f"stationary solve produced {pi.min():.3e} < 0")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    return ProbVec(gen.space, pi, leak=leak(gen, pi))


def stationary_shift(gen: Generator, reference: ProbVec) -> ProbVec:
    """Stationary law of a perturbed generator, stored as a shift of ``reference``.

    ``reference`` must be the stationary law of ``gen.base``.  The shift
    ``z = pi - reference`` solves ``z Q = -reference E`` with ``sum z = 0``,
    where ``E`` is the perturbation; the right-hand side is supported on the
    perturbed states only, so ``z`` is obtained to full relative accuracy no
    matter how small it is.
    """
    if gen.base is None or gen.perturbation is None:
        raise ValueError("generator carries no base/perturbation split")
    if not gen.is_irreducible:
        raise ReducibleChainError(f"generator on {gen.space!r} is not irreducible")
    ref = reference.values
    b = -(gen.perturbation.T @ ref)
    Qt = gen.Q.T.tocsc()
    row = int(np.argmax(ref))
    lu = _normalised_lu(Qt, row)
    rhs = b.copy()
    rhs[row] = 0.0
    z = lu.solve(rhs)
    for _ in range(2):
        r = b - Qt @ z
        r[row] = -z.sum()
        z = z + lu.solve(r)
    resid = float(np.abs(Qt @ z - b).max())
    scale = max(float(np.abs(b).max()), 1e-300)
    if not np.all(np.isfinite(z)) or resid > 1e-10 * scale * max(gen.max_rate, 1.0):
        raise StationarySolveError(f"shift residual {resid:.3e} (rhs scale {scale:.3e})")
    values = np.clip(ref + z, 0.0, None)
    values /= values.sum()
    return ProbVec(gen.space, values, reference=reference, deviation=z,
                   leak=leak(gen, values))


def center(rhs: np.ndarray, pi: ProbVec | np.ndarray) -> np.ndarray:
    """``rhs - <pi, rhs>`` (column-wise for 2-d input)."""
    p = pi.values if isinstance(pi, ProbVec) else np.asarray(pi)
    rhs = np.asarray(rhs, dtype=float)
    return rhs - p @ rhs


def _stein_lu(gen: Generator, pivot: int):
    key = ("stein_lu", pivot)
    if key not in gen._cache:
        keep = np.delete(np.arange(gen.size), pivot)
        A = gen.Q[keep][:, keep].tocsc()
        gen._cache[key] = (keep, spla.splu(A))
    return gen._cache[key]


def solve_stein(gen: Generator, rhs: np.ndarray, pi: ProbVec | None = None,
                gauge_state: int = 0) -> SteinSolution:
    """Solve ``Q g = rhs`` with ``g(gauge_state) = 0``.

    ``rhs`` may be 2-d (one right-hand side per column).  It must already be
    centred with respect to the stationary law ``pi`` (computed when not
    given); the residual centring error is removed before solving.

    Raises
    ------
    NotCenteredError
        If ``|<pi, rhs>|`` exceeds ``1e-9 * max|rhs|``.
    SteinSolveError
        If the relative residual exceeds ``STEIN_RTOL``.
    """
    if pi is None:
        pi = stationary(gen)
    rhs = np.asarray(rhs, dtype=float)
    mean = pi.values @ rhs
    scale = np.abs(rhs).max(axis=0) if rhs.size else 0.0
    if np.any(np.abs(mean) > CENTERING_TOL * np.maximum(scale, 1e-300)):
        raise NotCenteredError(f"<pi, rhs> = {mean!r}; centre the right-hand side first")
    rhs = rhs - mean
    # pinning at a heavy state keeps the reduced system well conditioned
    pivot = int(np.argmax(pi.values))
    keep, lu = _stein_lu(gen, pivot)
    g = np.zeros_like(rhs)
    g[keep] = lu.solve(np.ascontiguousarray(rhs[keep]))
    g = g - g[gauge_state]
    resid = np.abs(gen.Q @ g - rhs).max(axis=0)
    denom = np.abs(rhs).max(axis=0) + gen.max_rate * np.abs(g).max(axis=0)
    rel = float(np.max(resid / np.maximum(denom, 1e-300))) if rhs.size else 0.0
    if not math.isfinite(rel) or rel > STEIN_RTOL:
        raise SteinSolveError(f"Stein residual {rel:.3e} exceeds {STEIN_RTOL:g}")
    return SteinSolution(gen.space, g, gauge_state, rel)


def stein_covector(gen: Generator, ell: np.ndarray, pi: ProbVec) -> np.ndarray:
    """Covector ``c`` with ``<ell, g_h> = <c, h>`` for every ``h``.

    ``g_h`` is the Stein solution for the centred right-hand side
    ``h - <pi, h>``; ``ell`` must annihilate constants (it sees ``g_h`` only
    up to gauge).  One transposed solve replaces one solve per ``h``.
    """
    ell = np.asarray(ell, dtype=float)
    if abs(ell.sum()) > 1e-12 * max(np.abs(ell).sum(), 1.0):
        raise ValueError("ell must annihilate constants")
    pivot = int(np.argmax(pi.values))
    keep, lu = _stein_lu(gen, pivot)
    y = np.zeros(gen.size)
    y[keep] = lu.solve(ell[keep], trans="T")
    return y - y.sum() * pi.values


def simulate(gen: Generator, steps: int, seed: int, start: int = 0) -> ProbVec:
    """Occupation-time estimate of the stationary law from one trajectory.

    Gillespie dynamics: exponential holding times and jumps chosen in
    proportion to the rates.  The first ``steps // 10`` jumps are burn-in and
    are followed by ``steps`` recorded jumps.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    off = gen.off_diagonal()
    indptr = off.indptr.tolist()
    targets = off.indices.tolist()
    cum = []
    for i in range(gen.size):
        cum.extend(np.cumsum(off.data[off.indptr[i]:off.indptr[i + 1]]).tolist())
    totals = [cum[indptr[i + 1] - 1] if indptr[i + 1] > indptr[i] else 0.0
              for i in range(gen.size)]
    rng = np.random.Generator(np.random.PCG64(seed))
    burn = steps // 10
    occ = np.zeros(gen.size)
    state = int(start)
    chunk = 1 << 16
    done = 0
    total_steps = burn + steps
    while done < total_steps:
        m = min(chunk, total_steps - done)
        holds = rng.standard_exponential(m).tolist()
        us = rng.random(m).tolist()
        for t in range(m):
            rate = totals[state]
            if rate <= 0.0:
                raise ReducibleChainError(f"absorbing state {gen.space.state(state)!r}")
            if done + t >= burn:
                occ[state] += holds[t] / rate
            lo, hi = indptr[state], indptr[state + 1]
            j = bisect.bisect_right(cum, us[t] * rate, lo, hi - 1)
            state = targets[j]
        done += m
    return ProbVec(gen.space, occ / occ.sum())
