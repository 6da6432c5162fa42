"""Order fits ``y ~ c (log lam)^q / lam^p`` and spread statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["RateFit", "fit_rate", "spread"]


def spread(values) -> float:
    """``(max - min) / median``."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        return float("nan")
    return float((v.max() - v.min()) / np.median(v))


@dataclass(frozen=True)
class RateFit:
    c: float
    p: float
    q: int
    residual: float
    residual_other: float

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        return self.c * np.log(lam) ** self.q / lam ** self.p


def _fit(log_lam, log_y, q):
    X = np.column_stack([np.ones_like(log_lam), -log_lam])
    target = log_y - q * np.log(log_lam)
    coef, *_ = np.linalg.lstsq(X, target, rcond=None)
    res = float(np.linalg.norm(X @ coef - target))
    return math.exp(coef[0]), float(coef[1]), res


def fit_rate(points) -> RateFit:
    """Least-squares fit of ``log y = log c + q log log lam - p log lam``.

    Both ``q = 0`` and ``q = 1`` are fitted; the model with the smaller
    residual norm wins.

    Parameters
    ----------
    points : iterable of (lam, y)
        At least four distinct ``lam > 1`` with ``y > 0``.
    """
    pts = [(float(a), float(b)) for a, b in points]
    lam = np.array([a for a, _ in pts])
    y = np.array([b for _, b in pts])
    if len(np.unique(lam)) < 4:
        raise ValueError("rate fit needs at least four distinct lambda values")
    if np.any(lam <= 1.0) or np.any(y <= 0.0):
        raise ValueError("rate fit needs lambda > 1 and y > 0")
    log_lam = np.log(lam)
    log_y = np.log(y)
    fits = {q: _fit(log_lam, log_y, q) for q in (0, 1)}
    q = 0 if fits[0][2] <= fits[1][2] else 1
    c, p, res = fits[q]
    return RateFit(c, p, q, res, fits[1 - q][2])
