"""Eigenvalue references that avoid LAPACK: power iteration and the characteristic polynomial."""

import numpy as np


def covariance(X):
    X = np.asarray(X, dtype=float)
    Xc = X - X.mean(axis=0)
    return Xc.T @ Xc / (len(X) - 1)


def power_eigenvalues(S, iters=20000, seed=0):
    """All eigenvalues of a symmetric PSD matrix by power iteration with Hotelling deflation."""
    S = np.array(S, dtype=float)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(len(S)):
        v = rng.normal(size=len(S))
        v /= np.linalg.norm(v)
        for _ in range(iters):
            w = S @ v
            norm = np.linalg.norm(w)
            if norm == 0:
                break
            v = w / norm
        lam = float(v @ S @ v)
        out.append(lam)
        S = S - lam * np.outer(v, v)
    return np.sort(out)[::-1]


def charpoly(S):
    """Coefficients of det(xI - S), highest degree first (Faddeev-LeVerrier)."""
    n = len(S)
    coeffs = [1.0]
    M = np.zeros_like(S, dtype=float)
    for k in range(1, n + 1):
        M = S @ M + coeffs[-1] * np.eye(n)
        coeffs.append(-np.trace(S @ M) / k)
    return np.array(coeffs)


def charpoly_eigenvalues(S, grid=200001):
    """Real roots of the characteristic polynomial on [0, trace] by sign change and bisection."""
    c = charpoly(np.asarray(S, dtype=float))
    hi = float(np.trace(S)) * (1 + 1e-9) + 1e-12
    xs = np.linspace(-1e-12, hi, grid)
    vals = np.polyval(c, xs)
    roots = []
    for i in np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]:
        a, b = xs[i], xs[i + 1]
        fa = np.polyval(c, a)
        for _ in range(200):
            m = 0.5 * (a + b)
            fm = np.polyval(c, m)
            if np.sign(fm) == np.sign(fa):
                a, fa = m, fm
            else:
                b = m
        roots.append(0.5 * (a + b))
    return np.sort(roots)[::-1]
