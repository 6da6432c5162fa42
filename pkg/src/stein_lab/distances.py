"""Distances between laws and between point configurations.

``tv``  total variation between probability vectors on one space.
``d1``  normalised optimal-matching distance between configurations.
``d2_exact``  Kantorovich distance with ground cost ``d1`` between laws on
a :class:`ConfigSpace`; by duality this is the supremum of
``|E_P h - E_Q h|`` over functions that are 1-Lipschitz for ``d1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment, linprog

from .ctmc import ProbVec
from .state_space import Carrier, ConfigSpace

log = logging.getLogger(__name__)

__all__ = [
    "SpaceMismatch",
    "D2GuardExceeded",
    "NotInH2",
    "tv",
    "signed_difference",
    "d1",
    "d1_matrix",
    "d2_exact",
    "d2_transport",
    "d2_lower_bound",
    "TransportResult",
    "D2_MAX_STATES",
]

D2_MAX_STATES = 3000


class SpaceMismatch(ValueError):
    pass


class D2GuardExceeded(ValueError):
    pass


class NotInH2(ValueError):
    pass


def _check_same(p: ProbVec, q: ProbVec) -> None:
    if not p.space.same_as(q.space):
        raise SpaceMismatch(f"{p.space!r} vs {q.space!r}")


def signed_difference(p: ProbVec, q: ProbVec) -> np.ndarray:
    """``p - q`` as a signed measure, read off a stored shift when one exists."""
    _check_same(p, q)
    if p.deviation is not None and p.reference is q:
        return p.deviation
    if q.deviation is not None and q.reference is p:
        return -q.deviation
    if (p.deviation is not None and q.deviation is not None
            and p.reference is q.reference):
        return p.deviation - q.deviation
    return p.values - q.values


def tv(p: ProbVec, q: ProbVec) -> float:
    """Total variation ``sup_A |p(A) - q(A)| = 0.5 * sum |p - q|``."""
    return 0.5 * float(np.abs(signed_difference(p, q)).sum())


def d1(xi, eta, carrier: Carrier) -> float:
    """Normalised matching distance between two configurations (count vectors).

    1 when the totals differ, otherwise the minimum-cost perfect matching
    under ``carrier.d0`` divided by the common total.  ``d1(0, 0) = 0``.
    """
    xi = np.asarray(xi, dtype=np.int64)
    eta = np.asarray(eta, dtype=np.int64)
    n = int(xi.sum())
    if n != int(eta.sum()):
        return 1.0
    if n == 0:
        return 0.0
    # shared points stay matched in place: d0 is a metric
    common = np.minimum(xi, eta)
    rx, ry = xi - common, eta - common
    left = np.repeat(np.arange(len(rx)), rx)
    right = np.repeat(np.arange(len(ry)), ry)
    if len(left) == 0:
        return 0.0
    cost = carrier.d0[np.ix_(left, right)]
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].sum()) / n


def d1_matrix(space: ConfigSpace, rows=None, cols=None) -> np.ndarray:
    """Pairwise ``d1`` between states (optionally a sub-block by index)."""
    rows = np.arange(space.size) if rows is None else np.asarray(rows)
    cols = np.arange(space.size) if cols is None else np.asarray(cols)
    X = space.counts[rows]
    Y = space.counts[cols]
    tx = X.sum(axis=1)
    ty = Y.sum(axis=1)
    out = np.ones((len(rows), len(cols)))
    same = tx[:, None] == ty[None, :]
    if space.carrier.is_discrete:
        # every unmatched point costs exactly 1
        shared = np.minimum(X[:, None, :], Y[None, :, :]).sum(axis=2)
        n = np.where(tx > 0, tx, 1)[:, None]
        vals = (tx[:, None] - shared) / n
        out[same] = vals[same]
        return out
    for i, j in zip(*np.nonzero(same)):
        out[i, j] = d1(X[i], Y[j], space.carrier)
    return out


@dataclass
class TransportResult:
    value: float
    dual_value: float
    gap: float
    plan: np.ndarray
    sources: np.ndarray
    sinks: np.ndarray


def d2_transport(P: ProbVec, Q: ProbVec) -> TransportResult:
    """Optimal transport between ``P`` and ``Q`` under ground cost ``d1``.

    Mass common to both laws stays in place (optimal for a metric cost), so
    only the positive part of ``P - Q`` is moved onto the negative part.  The
    reduced problem is scaled to unit mass, solved as a linear program by
    HiGHS, and the primal/dual gap is reported.
    """
    _check_same(P, Q)
    space = P.space
    if not isinstance(space, ConfigSpace):
        raise TypeError("d2 is defined on configuration spaces")
    if space.size > D2_MAX_STATES:
        raise D2GuardExceeded(
            f"{space.size} states exceed the transport guard of {D2_MAX_STATES}; "
            "use d2_lower_bound instead"
        )
    diff = signed_difference(P, Q)
    src = np.nonzero(diff > 0)[0]
    snk = np.nonzero(diff < 0)[0]
    if len(src) == 0 or len(snk) == 0:
        return TransportResult(0.0, 0.0, 0.0, np.zeros((len(src), len(snk))), src, snk)
    supply = diff[src]
    demand = -diff[snk]
    mass = 0.5 * (supply.sum() + demand.sum())
    supply = supply / supply.sum()
    demand = demand / demand.sum()
    C = d1_matrix(space, src, snk)
    m, n = C.shape
    # row-sum and column-sum constraints of the transport polytope
    A_rows = sp.kron(sp.eye(m), np.ones((1, n)))
    A_cols = sp.kron(np.ones((1, m)), sp.eye(n))
    A = sp.vstack([A_rows, A_cols]).tocsr()
    b = np.concatenate([supply, demand])
    res = linprog(C.ravel(), A_eq=A, b_eq=b, bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    primal = float(res.fun)
    dual = float(b @ res.eqlin.marginals)
    gap = abs(primal - dual)
    log.debug("d2 transport: primal %.12g dual %.12g gap %.3g", primal, dual, gap)
    return TransportResult(mass * primal, mass * dual, mass * gap,
                           res.x.reshape(m, n) * mass, src, snk)


def d2_exact(P: ProbVec, Q: ProbVec) -> float:
    """The d2 distance between two laws of point configurations."""
    return d2_transport(P, Q).value


def d2_lower_bound(P: ProbVec, Q: ProbVec, h: np.ndarray, check: bool = True) -> float:
    """``|E_P h - E_Q h|`` for one test function ``h``, a lower bound on d2.

    Raises :class:`NotInH2` when ``check`` is set and ``h`` is not
    1-Lipschitz with respect to ``d1``.
    """
    h = np.asarray(h, dtype=float)
    if check:
        from .point_process import check_h2_membership
        ok, worst = check_h2_membership(h, P.space)
        if not ok:
            raise NotInH2(f"h violates the Lipschitz condition at {worst}")
    return abs(float(signed_difference(P, Q) @ h))
