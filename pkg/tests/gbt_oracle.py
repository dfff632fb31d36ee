"""Brute-force reference for a single regression stump.

Every (feature, threshold) pair is tried; each candidate is fit as a ridge
least-squares problem with one indicator column per side, so the leaf values
and the penalized residual come from ``numpy.linalg.lstsq`` rather than from
any gradient/hessian bookkeeping.
"""

import numpy as np


def ridge_stump_fit(r, mask, lam):
    n = len(r)
    A = np.column_stack([mask, ~mask]).astype(np.float64)
    target = r
    if lam > 0:
        A = np.vstack([A, np.sqrt(lam) * np.eye(2)])
        target = np.concatenate([r, np.zeros(2)])
    w, *_ = np.linalg.lstsq(A, target, rcond=None)
    resid = target - A @ w
    return float(resid @ resid), w[0], w[1]


def best_stump(X, r, lam, min_leaf=1):
    """Return (feature, threshold, left_value, right_value) minimizing penalized squared error.

    Ties keep the first candidate in (feature, threshold) ascending order.
    """
    best = None
    for f in range(X.shape[1]):
        for thr in np.unique(X[:, f])[:-1]:
            mask = X[:, f] <= thr
            if mask.sum() < min_leaf or (~mask).sum() < min_leaf:
                continue
            loss, wl, wr = ridge_stump_fit(r, mask, lam)
            if best is None or loss < best[0] - 1e-12 * max(1.0, abs(best[0])):
                best = (loss, f, float(thr), wl, wr)
    return best[1:]
