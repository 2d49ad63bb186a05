"""Independent reference computations used only by the tests."""
import itertools
from fractions import Fraction

import numpy as np


def budget_projection_bisection(v, p, b, iters=200):
    """Projection onto {x >= 0, p.x <= b} by bisection on the halfspace multiplier."""
    v = np.asarray(v, dtype=float)
    p = np.asarray(p, dtype=float)
    x = np.maximum(v, 0.0)
    if p @ x <= b:
        return x
    lo, hi = 0.0, 1.0
    while p @ np.maximum(v - hi * p, 0.0) > b:
        hi *= 2.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if p @ np.maximum(v - mid * p, 0.0) > b:
            lo = mid
        else:
            hi = mid
    return np.maximum(v - hi * p, 0.0)


def budget_projection_grid(v, p, b, points=41):
    """Brute-force argmin of |x - v|^2 over a lattice of the budget set plus its face.

    Lattice points on ``[0, min(b/p_j, max(v_j, 0))]`` per axis, plus every
    lattice point lifted onto ``p.x = b`` along each priced axis, so the
    candidate set is dense on the halfspace face as well as the orthant faces.

    Returns
    -------
    x : ndarray
    spacing : float
        Largest lattice spacing.
    """
    v = np.asarray(v, dtype=float)
    p = np.asarray(p, dtype=float)
    m = v.shape[0]
    hi = np.maximum(v, 0.0)
    priced = p > 0
    hi[priced] = np.minimum(hi[priced], b / p[priced])
    axes = [np.linspace(0.0, h, points) for h in hi]
    spacing = float(max(h / (points - 1) for h in hi)) if m else 0.0
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    cands = [grid[grid @ p <= b + 1e-12]]
    for k in np.flatnonzero(priced):
        rest = grid.copy()
        rest[:, k] = 0.0
        xk = (b - rest @ p) / p[k]
        ok = xk >= 0
        lifted = rest[ok]
        lifted[:, k] = xk[ok]
        cands.append(lifted)
    C = np.unique(np.vstack(cands), axis=0)
    d = np.sum((C - v) ** 2, axis=1)
    # floating sums cannot separate near-ties; settle them in exact rationals
    near = np.flatnonzero(d <= d.min() * (1 + 1e-12) + 1e-300)
    near = near[np.argsort(d[near], kind="stable")[:64]]
    exact = [sum((Fraction(c) - Fraction(t)) ** 2 for c, t in zip(C[k], v)) for k in near]
    return C[near[int(np.argmin(exact))]], spacing


def grid_best_utility(utility_fn, budget, p, points=200):
    """Largest utility over a lattice of the budget set (m <= 3), scanned in slabs."""
    p = np.asarray(p, dtype=float)
    m = p.shape[0]
    axes = [np.linspace(0.0, budget / p[j], points) for j in range(m)]
    best = -np.inf
    if m == 1:
        return max(utility_fn(np.array([a])) for a in axes[0])
    rest = np.array(list(itertools.product(*axes[1:])))
    for a in axes[0]:
        pts = np.column_stack([np.full(rest.shape[0], a), rest])
        pts = pts[pts @ p <= budget * (1 + 1e-12)]
        if pts.shape[0]:
            best = max(best, float(np.max(utility_fn(pts))))
    return best


def batch_utility(kind, valuations, pts):
    """Utilities of the rows of ``pts``, written out independently of the package."""
    v = np.asarray(valuations, dtype=float)
    pts = np.atleast_2d(pts)
    if kind == "linear":
        return pts @ v
    on = v > 0
    if kind == "cobb-douglas":
        w = v[on] / v.sum()
        with np.errstate(divide="ignore"):
            return np.exp(np.log(pts[:, on]) @ w)
    return np.min(pts[:, on] / v[on], axis=1)
