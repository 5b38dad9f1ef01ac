"""Exact 1-D Wasserstein-1 distance between weighted empirical distributions."""

from __future__ import annotations

import numpy as np


def _prepare(points, weights):
    x = np.asarray(points, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("empty distribution")
    if weights is None:
        w = np.full(x.size, 1.0 / x.size)
    else:
        w = np.asarray(weights, dtype=np.float64).ravel()
        if w.shape != x.shape:
            raise ValueError("points and weights differ in length")
        if np.any(w < 0):
            raise ValueError("negative weight")
        total = w.sum()
        if total <= 0:
            raise ValueError("weights sum to zero")
        w = w / total
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite support point")
    order = np.argsort(x, kind="stable")
    return x[order], w[order]


def wasserstein_1d(a, b, a_weights=None, b_weights=None) -> float:
    """W1 via the quantile integral of |F_a^-1 - F_b^-1| over [0, 1].

    Both quantile functions are step functions, so the integral is summed
    exactly over the merged breakpoints of the two cumulative weights.
    """
    xa, wa = _prepare(a, a_weights)
    xb, wb = _prepare(b, b_weights)
    ca = np.cumsum(wa)
    cb = np.cumsum(wb)
    ca[-1] = cb[-1] = 1.0
    levels = np.union1d(ca, cb)
    widths = np.diff(np.concatenate([[0.0], levels]))
    # quantile functions are constant on each interval; sample at its midpoint
    mids = levels - widths / 2
    qa = xa[np.minimum(np.searchsorted(ca, mids, side="left"), len(xa) - 1)]
    qb = xb[np.minimum(np.searchsorted(cb, mids, side="left"), len(xb) - 1)]
    return float(np.sum(widths * np.abs(qa - qb)))
