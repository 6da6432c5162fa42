"""Truncated state spaces with bijective state <-> index maps.

Three families are provided:

* :class:`UniSpace`   -- the interval ``{0, ..., n_max}``;
* :class:`BoxSpace`   -- the lattice box ``prod_i {0, ..., n_max[i]}``;
* :class:`ConfigSpace` -- count vectors of point configurations on a finite
  :class:`Carrier` ``S u {a} u {b}``.

Every space exposes its states as rows of an integer ``counts`` array (one
column per coordinate), enumerated in lexicographic order.  Moves are pairs
``(coord, step)`` with ``step`` in ``{+1, -1}``.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "OUT_OF_RANGE",
    "StateSpaceOverflow",
    "Carrier",
    "StateSpace",
    "UniSpace",
    "BoxSpace",
    "ConfigSpace",
    "enumerate_states",
    "neighbor",
    "max_states",
    "default_truncation",
]

DEFAULT_MAX_STATES = 60_000


class _OutOfRange:
    __slots__ = ()

    def __repr__(self) -> str:
        return "OUT_OF_RANGE"

    def __bool__(self) -> bool:
        return False


OUT_OF_RANGE = _OutOfRange()


class StateSpaceOverflow(RuntimeError):
    """The requested truncation enumerates more states than allowed."""


def max_states() -> int:
    """State-count cap, read from ``STEIN_LAB_MAX_STATES`` when set."""
    raw = os.environ.get("STEIN_LAB_MAX_STATES")
    if raw is None or raw.strip() == "":
        return DEFAULT_MAX_STATES
    return int(raw)


def default_truncation(mean: float) -> int:
    """Truncation level ``ceil(mean + 12 sqrt(mean) + 20)`` for a Poisson coordinate."""
    return int(math.ceil(mean + 12.0 * math.sqrt(mean) + 20.0))


@dataclass(frozen=True, eq=False)
class Carrier:
    """Finite ground space ``S u {a} u {b}`` with metric and intensity.

    Coordinates are ordered ``(s_0, ..., s_{s_size-1}, a, b)``.  The intensity
    puts ``1/lambda_total`` on each of ``a`` and ``b`` and spreads the rest
    uniformly over ``S``.

    Parameters
    ----------
    lambda_total : float
        Total mass ``|lambda|``; must exceed ``sqrt(2)`` so that ``S`` keeps
        positive mass.
    s_size : int
        Number of points in ``S``.
    d0_s : array_like, optional
        ``s_size x s_size`` distance matrix inside ``S``.  Defaults to the
        discrete metric.
    """

    lambda_total: float
    s_size: int = 1
    d0_s: np.ndarray | None = None
    d0: np.ndarray = field(init=False, repr=False)
    intensity: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        L = float(self.lambda_total)
        if not L > math.sqrt(2.0):
            raise ValueError(f"lambda_total must exceed sqrt(2), got {L}")
        if self.s_size < 1:
            raise ValueError("s_size must be >= 1")
        s = self.s_size
        if self.d0_s is None:
            ds = 1.0 - np.eye(s)
        else:
            ds = np.array(self.d0_s, dtype=float)
            if ds.shape != (s, s):
                raise ValueError(f"d0_s must have shape ({s}, {s})")
            _check_metric(ds)
        d0 = np.ones((s + 2, s + 2))
        d0[:s, :s] = ds
        np.fill_diagonal(d0, 0.0)
        d0.setflags(write=False)
        intensity = np.empty(s + 2)
        intensity[:s] = (L - 2.0 / L) / s
        intensity[s:] = 1.0 / L
        intensity.setflags(write=False)
        object.__setattr__(self, "lambda_total", L)
        object.__setattr__(self, "d0", d0)
        object.__setattr__(self, "intensity", intensity)

    @property
    def n_points(self) -> int:
        return self.s_size + 2

    @property
    def index_a(self) -> int:
        return self.s_size

    @property
    def index_b(self) -> int:
        return self.s_size + 1

    @property
    def is_discrete(self) -> bool:
        """True when every pair of distinct points is at distance 1."""
        off = ~np.eye(self.n_points, dtype=bool)
        return bool(np.all(self.d0[off] == 1.0))


def _check_metric(d: np.ndarray, atol: float = 1e-12) -> None:
    if not np.allclose(d, d.T, atol=atol):
        raise ValueError("distance matrix must be symmetric")
    if np.any(np.abs(np.diag(d)) > atol):
        raise ValueError("distance matrix must vanish on the diagonal")
    off = ~np.eye(len(d), dtype=bool)
    if np.any(d[off] <= 0) or np.any(d > 1.0 + atol):
        raise ValueError("distances must lie in (0, 1] off the diagonal")
    # triangle inequality d[i,k] <= d[i,j] + d[j,k]
    if np.any(d[:, None, :] > d[:, :, None] + d[None, :, :] + atol):
        raise ValueError("distance matrix violates the triangle inequality")


class StateSpace:
    """Enumerated truncated state space.

    Subclasses fill ``counts`` (an ``M x D`` integer array, lexicographic).
    """

    counts: np.ndarray

    def _finish(self, rows: Iterator[tuple[int, ...]], dim: int) -> None:
        cap = max_states()
        buf = list(itertools.islice(rows, cap + 1))
        if len(buf) > cap:
            raise StateSpaceOverflow(
                f"{type(self).__name__} has more than {cap} states; lower the "
                "truncation or raise STEIN_LAB_MAX_STATES"
            )
        counts = np.array(buf, dtype=np.int64).reshape(len(buf), dim)
        counts.setflags(write=False)
        self.counts = counts
        self._index = {tuple(int(v) for v in row): i for i, row in enumerate(buf)}

    @property
    def size(self) -> int:
        return len(self.counts)

    def __len__(self) -> int:
        return self.size

    @property
    def dim(self) -> int:
        return self.counts.shape[1]

    @property
    def moves(self) -> list[tuple[int, int]]:
        return [(c, s) for c in range(self.dim) for s in (+1, -1)]

    def _key(self, state) -> tuple[int, ...]:
        if isinstance(state, (int, np.integer)):
            return (int(state),)
        return tuple(int(v) for v in state)

    def state(self, i: int):
        row = self.counts[i]
        return tuple(int(v) for v in row)

    def index(self, state) -> int:
        try:
            return self._index[self._key(state)]
        except KeyError:
            raise KeyError(f"{state!r} is not a state of {self!r}") from None

    def __contains__(self, state) -> bool:
        return self._key(state) in self._index

    def states(self) -> list:
        return [self.state(i) for i in range(self.size)]

    def neighbor(self, state, move: tuple[int, int]):
        """Target of ``move`` from ``state``, or :data:`OUT_OF_RANGE`."""
        coord, step = move
        key = list(self._key(state))
        key[coord] += step
        key = tuple(key)
        if key in self._index:
            return self.state(self._index[key])
        return OUT_OF_RANGE

    def neighbor_indices(self, move: tuple[int, int]) -> np.ndarray:
        """Vectorised neighbour map; ``-1`` marks out-of-range targets."""
        coord, step = move
        out = np.full(self.size, -1, dtype=np.int64)
        target = self.counts.copy()
        target[:, coord] += step
        get = self._index.get
        for i, row in enumerate(target.tolist()):
            out[i] = get(tuple(row), -1)
        return out

    def same_as(self, other: "StateSpace") -> bool:
        return self is other or (
            type(self) is type(other)
            and self.counts.shape == other.counts.shape
            and np.array_equal(self.counts, other.counts)
        )


class UniSpace(StateSpace):
    """The interval ``{0, 1, ..., n_max}``; ``index(j) == j``."""

    def __init__(self, n_max: int):
        if n_max < 1:
            raise ValueError("n_max must be >= 1")
        self.n_max = int(n_max)
        self._finish(((j,) for j in range(self.n_max + 1)), 1)

    def state(self, i: int) -> int:
        return int(self.counts[i, 0])

    def index(self, state) -> int:
        j = int(state[0] if isinstance(state, tuple) else state)
        if not 0 <= j <= self.n_max:
            raise KeyError(f"{state!r} is not a state of {self!r}")
        return j

    def neighbor(self, state, move):
        coord, step = move
        if coord != 0:
            raise ValueError("UniSpace has a single coordinate")
        j = int(state) + step
        return j if 0 <= j <= self.n_max else OUT_OF_RANGE

    def neighbor_indices(self, move):
        _, step = move
        j = np.arange(self.size) + step
        j[(j < 0) | (j > self.n_max)] = -1
        return j

    def __repr__(self) -> str:
        return f"UniSpace(n_max={self.n_max})"


class BoxSpace(StateSpace):
    """Lattice box ``prod_i {0, ..., n_max[i]}`` with mixed-radix indexing."""

    def __init__(self, n_max: Sequence[int]):
        n_max = tuple(int(v) for v in n_max)
        if len(n_max) < 2:
            raise ValueError("BoxSpace needs d >= 2")
        if min(n_max) < 1:
            raise ValueError("per-coordinate truncation must be positive")
        self.n_max = n_max
        self.d = len(n_max)
        self.shape = tuple(v + 1 for v in n_max)
        self._strides = np.array(
            [int(np.prod(self.shape[i + 1:])) for i in range(self.d)], dtype=np.int64
        )
        total = int(np.prod(self.shape))
        if total > max_states():
            raise StateSpaceOverflow(
                f"box {self.shape} has {total} states (cap {max_states()})"
            )
        grid = np.indices(self.shape).reshape(self.d, -1).T
        grid.setflags(write=False)
        self.counts = grid

    def index(self, state) -> int:
        w = np.asarray(self._key(state))
        if w.shape != (self.d,) or np.any(w < 0) or np.any(w > np.array(self.n_max)):
            raise KeyError(f"{state!r} is not a state of {self!r}")
        return int(w @ self._strides)

    def __contains__(self, state) -> bool:
        w = self._key(state)
        return len(w) == self.d and all(0 <= x <= n for x, n in zip(w, self.n_max))

    def neighbor(self, state, move):
        coord, step = move
        w = list(self._key(state))
        w[coord] += step
        return tuple(w) if 0 <= w[coord] <= self.n_max[coord] else OUT_OF_RANGE

    def neighbor_indices(self, move):
        coord, step = move
        j = np.arange(self.size) + step * self._strides[coord]
        c = self.counts[:, coord] + step
        j[(c < 0) | (c > self.n_max[coord])] = -1
        return j

    def __repr__(self) -> str:
        return f"BoxSpace(n_max={list(self.n_max)})"


class ConfigSpace(StateSpace):
    """Point configurations on a finite carrier, stored as count vectors.

    States are all ``xi`` with ``xi(Gamma) <= n_total_max`` and
    ``xi({a}), xi({b}) <= n_ab_max``.
    """

    def __init__(self, carrier: Carrier, n_total_max: int | None = None,
                 n_ab_max: int = 6):
        if n_total_max is None:
            n_total_max = default_truncation(carrier.lambda_total)
        if n_total_max < 1 or n_ab_max < 1:
            raise ValueError("truncation parameters must be positive")
        self.carrier = carrier
        self.n_total_max = int(n_total_max)
        self.n_ab_max = int(n_ab_max)
        self._finish(self._generate(), carrier.n_points)
        self.totals = self.counts.sum(axis=1)
        self.totals.setflags(write=False)

    def _generate(self) -> Iterator[tuple[int, ...]]:
        s = self.carrier.s_size
        N, cap = self.n_total_max, self.n_ab_max

        def rec(prefix: tuple[int, ...], left: int):
            pos = len(prefix)
            if pos == s + 2:
                yield prefix
                return
            top = left if pos < s else min(left, cap)
            for v in range(top + 1):
                yield from rec(prefix + (v,), left - v)

        return rec((), N)

    def empty_index(self) -> int:
        return self.index((0,) * self.carrier.n_points)

    def unit(self, point: int, times: int = 1) -> tuple[int, ...]:
        xi = [0] * self.carrier.n_points
        xi[point] += times
        return tuple(xi)

    def __repr__(self) -> str:
        return (f"ConfigSpace(s_size={self.carrier.s_size}, "
                f"n_total_max={self.n_total_max}, n_ab_max={self.n_ab_max})")


def enumerate_states(space: StateSpace) -> tuple[list, dict]:
    """Ordered state list and the matching state -> index map."""
    states = space.states()
    return states, {s: i for i, s in enumerate(states)}


def neighbor(space: StateSpace, state, move):
    return space.neighbor(state, move)
