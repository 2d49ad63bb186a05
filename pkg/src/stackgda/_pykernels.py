"""Pure-Python kernels.

Reference implementation of the hot loops. ``_ckernels.pyx`` mirrors every
function here with the same signature and return layout; ``kernels`` picks
one at import time.

Utility kinds are small integers: 0 linear, 1 Cobb-Douglas, 2 Leontief.
For Cobb-Douglas the ``params`` rows hold normalized exponents, for the
other two the raw valuations.
"""
import math

import numpy as np

LINEAR = 0
COBB_DOUGLAS = 1
LEONTIEF = 2

# Cobb-Douglas coordinates below this are evaluated at it before differentiating.
CD_FLOOR = 1e-9

STATUS_OK = 0
STATUS_PROJECTION = 1
STATUS_DOMAIN = 2
STATUS_DIVERGED = 3

BACKEND = "python"


def _finish_budget(x, p, b):
    # clip to the orthant, then shrink onto the halfspace if rounding left it outside
    r = np.maximum(x, 0.0)
    s = float(p @ r)
    if s > b:
        # free goods do not enter the budget and keep their value
        priced = p > 0.0
        r[priced] = r[priced] * (b / s)
    return r


def budget_exact(v, p, b):
    """Projection onto ``{x >= 0, p.x <= b}`` through its multiplier.

    The projection is ``max(v - theta p, 0)`` for the smallest ``theta >= 0``
    meeting the budget. ``theta`` is bracketed by bisection, then solved in
    closed form on the resulting set of positive coordinates.
    """
    v = np.asarray(v, dtype=float)
    p = np.asarray(p, dtype=float)
    x = np.maximum(v, 0.0)
    if float(p @ x) <= b:
        return x
    lo, hi = 0.0, 1.0
    while float(p @ np.maximum(v - hi * p, 0.0)) > b:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if float(p @ np.maximum(v - mid * p, 0.0)) > b:
            lo = mid
        else:
            hi = mid
    on = (v - hi * p > 0.0) & (p > 0.0)
    den = float(p[on] @ p[on])
    theta = (float(p[on] @ v[on]) - b) / den if den > 0.0 else hi
    return _finish_budget(np.maximum(v - theta * p, 0.0), p, b)


def budget_dykstra(v, p, b, tol, max_iter):
    """Dykstra projection of ``v`` onto ``{x >= 0, p.x <= b}``.

    ``tol`` is relative to ``max(1, max|v|)`` so huge inputs can still stop.
    Dykstra crawls when the budget face is nearly parallel to an orthant
    face; if ``max_iter`` cycles pass, the result comes from
    :func:`budget_exact` and ``cycles`` is reported as ``max_iter``.

    Returns ``(x, converged, cycles, residual)``.
    """
    v = np.asarray(v, dtype=float)
    p = np.asarray(p, dtype=float)
    pp = float(p @ p)
    if pp == 0.0:
        return np.maximum(v, 0.0), True, 0, 0.0
    tol = tol * max(1.0, float(np.max(np.abs(v))) if v.size else 1.0)
    x = v.copy()
    inc_a = np.zeros_like(x)
    inc_b = np.zeros_like(x)
    residual = math.inf
    for k in range(1, max_iter + 1):
        y = np.maximum(x + inc_a, 0.0)
        inc_a = x + inc_a - y
        z = y + inc_b
        s = float(p @ z)
        xn = z - ((s - b) / pp) * p if s > b else z.copy()
        inc_b = z - xn
        change = float(np.max(np.abs(xn - x)))
        viol = max(-float(np.min(xn)), 0.0)
        x = xn
        residual = max(change, viol)
        if change < tol and viol <= tol:
            return _finish_budget(x, p, b), True, k, residual
    return budget_exact(v, p, b), True, max_iter, residual


def budget_pocs(v, p, b, tol, max_iter):
    """Plain alternating projections (orthant, then halfspace) from ``v``.

    Ends at *a* feasible point, not the Euclidean projection in general.
    After ``max_iter`` cycles the last iterate is clipped and rescaled into
    the set. Returns ``(x, converged, cycles, residual)``.
    """
    v = np.asarray(v, dtype=float)
    p = np.asarray(p, dtype=float)
    pp = float(p @ p)
    if pp == 0.0:
        return np.maximum(v, 0.0), True, 0, 0.0
    tol = tol * max(1.0, float(np.max(np.abs(v))) if v.size else 1.0)
    x = v.copy()
    residual = math.inf
    for k in range(1, max_iter + 1):
        y = np.maximum(x, 0.0)
        s = float(p @ y)
        z = y - ((s - b) / pp) * p if s > b else y
        change = float(np.max(np.abs(z - x)))
        viol = max(-float(np.min(z)), 0.0)
        x = z
        residual = max(change, viol)
        if change < tol and viol <= tol:
            return _finish_budget(x, p, b), True, k, residual
    return _finish_budget(x, p, b), True, max_iter, residual


def _project_row(mode, v, p, b, tol, max_iter):
    if mode == 0:
        return budget_dykstra(v, p, b, tol, max_iter)
    return budget_pocs(v, p, b, tol, max_iter)


def alloc_gradient(kind, w, b, x, delta):
    """Gradient of ``b * log(u(x) + delta)`` in ``x``; ``None`` off the domain."""
    if kind == LINEAR:
        denom = float(w @ x) + delta
        if not denom > 0.0:
            return None
        return (b / denom) * w
    if kind == COBB_DOUGLAS:
        xc = np.maximum(x, CD_FLOOR)
        mask = w > 0.0
        u = math.exp(float(np.sum(w[mask] * np.log(xc[mask]))))
        denom = u + delta
        if not denom > 0.0:
            return None
        return (b / denom) * w * u / xc
    # Leontief subgradient: all mass on the lowest-index minimizing coordinate
    k = -1
    best = math.inf
    for j in range(w.shape[0]):
        if w[j] > 0.0:
            r = x[j] / w[j]
            if r < best:
                best = r
                k = j
    denom = best + delta
    if k < 0 or not denom > 0.0:
        return None
    g = np.zeros_like(x)
    g[k] = b / denom / w[k]
    return g


def mbrd(kind, params, budgets, p0, x0, eta_p, eta_x, delta, mode, lagged, tol, max_iter):
    """Run the price/allocation loop.

    Returns ``(prices, allocations, constraint_prices, status, status_t)``:
    prices ``(T+1, m)``, allocations ``(T+1, n, m)``, and the price vector each
    allocation row was projected against ``(T, m)``. ``status`` is nonzero when
    the loop stopped early at step ``status_t``.
    """
    params = np.asarray(params, dtype=float)
    budgets = np.asarray(budgets, dtype=float)
    n, m = params.shape
    T = eta_p.shape[0]
    prices = np.zeros((T + 1, m))
    allocs = np.zeros((T + 1, n, m))
    used = np.zeros((T, m))
    p = np.array(p0, dtype=float)
    X = np.array(x0, dtype=float)
    p_prev = p.copy()
    prices[0] = p
    allocs[0] = X
    for t in range(T):
        excess = X.sum(axis=0) - 1.0
        p_new = np.maximum(p + eta_p[t] * excess, 0.0)
        p_con = p_prev if lagged else p
        X_new = np.empty_like(X)
        for i in range(n):
            g = alloc_gradient(kind, params[i], budgets[i], X[i], delta)
            if g is None:
                return prices[: t + 1], allocs[: t + 1], used[:t], STATUS_DOMAIN, t
            with np.errstate(over="ignore", invalid="ignore"):
                target = X[i] + eta_x[t] * g
            if not np.all(np.isfinite(target)):
                return prices[: t + 1], allocs[: t + 1], used[:t], STATUS_DIVERGED, t
            row, ok, _, _ = _project_row(mode, target, p_con, budgets[i], tol, max_iter)
            if not ok:
                return prices[: t + 1], allocs[: t + 1], used[:t], STATUS_PROJECTION, t
            X_new[i] = row
        used[t] = p_con
        p_prev = p
        p = p_new
        X = X_new
        prices[t + 1] = p
        allocs[t + 1] = X
    return prices, allocs, used, STATUS_OK, T


def buyer_log_utility(kind, w, b, p):
    """log of the utility of the closed-form demand; ``inf`` when unbounded."""
    if kind == LINEAR:
        best = -math.inf
        for j in range(w.shape[0]):
            if w[j] > 0.0:
                if p[j] <= 0.0:
                    return math.inf
                best = max(best, w[j] / p[j])
        return math.log(b * best)
    if kind == COBB_DOUGLAS:
        total = 0.0
        for j in range(w.shape[0]):
            if w[j] > 0.0:
                if p[j] <= 0.0:
                    return math.inf
                total += w[j] * math.log(b * w[j] / p[j])
        return total
    s = float(w @ p)
    if s <= 0.0:
        return math.inf
    return math.log(b / s)


def buyer_demand(kind, w, b, p):
    """Closed-form demand; ``None`` when it is unbounded."""
    m = w.shape[0]
    x = np.zeros(m)
    if kind == LINEAR:
        k = -1
        best = -math.inf
        for j in range(m):
            if w[j] > 0.0:
                if p[j] <= 0.0:
                    return None
                r = w[j] / p[j]
                if r > best:
                    best = r
                    k = j
        x[k] = b / p[k]
        return x
    if kind == COBB_DOUGLAS:
        for j in range(m):
            if w[j] > 0.0:
                if p[j] <= 0.0:
                    return None
                x[j] = b * w[j] / p[j]
        return x
    s = float(w @ p)
    if s <= 0.0:
        return None
    return w * (b / s)


def market_value(kind, params, budgets, p, delta):
    """Outer value ``sum(p) + sum_i b_i log(u_i(demand_i(p)) + delta)``."""
    total = float(np.sum(p))
    for i in range(params.shape[0]):
        lu = buyer_log_utility(kind, params[i], budgets[i], p)
        if lu == math.inf:
            return math.inf
        if delta == 0.0:
            total += budgets[i] * lu
        else:
            total += budgets[i] * math.log(math.exp(lu) + delta)
    return total


def market_values(kind, params, budgets, P, delta):
    out = np.empty(P.shape[0])
    for k in range(P.shape[0]):
        out[k] = market_value(kind, params, budgets, P[k], delta)
    return out


def reference_descent(kind, params, budgets, p0, iters, c, floor):
    """Projected subgradient descent on the outer value with steps ``c/sqrt(t)``.

    Returns ``(best_p, best_value, avg_p, avg_value)``.
    """
    n, m = params.shape
    p = np.array(p0, dtype=float)
    best_p = p.copy()
    best_val = math.inf
    acc = np.zeros(m)
    for t in range(1, iters + 1):
        val = float(np.sum(p))
        g = np.ones(m)
        ok = True
        for i in range(n):
            x = buyer_demand(kind, params[i], budgets[i], p)
            if x is None:
                ok = False
                break
            val += budgets[i] * buyer_log_utility(kind, params[i], budgets[i], p)
            g -= x
        if ok and val < best_val:
            best_val = val
            best_p = p.copy()
        if not ok:
            # an unpriced wanted good: push its price up
            g = -np.ones(m)
        acc += p
        p = np.maximum(p - (c / math.sqrt(t)) * g, floor)
    avg_p = acc / iters
    avg_val = market_value(kind, params, budgets, avg_p, 0.0)
    return best_p, best_val, avg_p, avg_val
