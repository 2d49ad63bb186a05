# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Mirrors ``_pykernels`` function by function."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, exp, fabs, isfinite, INFINITY

cnp.import_array()

LINEAR = 0
COBB_DOUGLAS = 1
LEONTIEF = 2
CD_FLOOR = 1e-9
STATUS_OK = 0
STATUS_PROJECTION = 1
STATUS_DOMAIN = 2
STATUS_DIVERGED = 3
BACKEND = "cython"

cdef double _CD_FLOOR = 1e-9


cdef inline double _dot(const double[::1] a, const double[::1] b, Py_ssize_t m) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t j
    for j in range(m):
        s += a[j] * b[j]
    return s


cdef void _finish(double[::1] x, const double[::1] p, double b, Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t j
    cdef double s = 0.0, scale
    for j in range(m):
        if x[j] < 0.0:
            x[j] = 0.0
        s += p[j] * x[j]
    if s > b:
        scale = b / s
        for j in range(m):
            if p[j] > 0.0:
                x[j] = x[j] * scale


cdef double _budget_excess(const double[::1] v, const double[::1] p, double b, double theta,
                           Py_ssize_t m) noexcept nogil:
    cdef double s = 0.0, t
    cdef Py_ssize_t j
    for j in range(m):
        t = v[j] - theta * p[j]
        if t > 0.0:
            s += p[j] * t
    return s - b


cdef void _exact(const double[::1] v, const double[::1] p, double b, double[::1] out,
                 Py_ssize_t m) noexcept nogil:
    # multiplier bracketed by bisection, then solved on the positive coordinates
    cdef double lo = 0.0, hi = 1.0, mid, num = 0.0, den = 0.0, theta, t
    cdef Py_ssize_t j
    cdef int k
    if _budget_excess(v, p, b, 0.0, m) <= 0.0:
        for j in range(m):
            out[j] = v[j] if v[j] > 0.0 else 0.0
        return
    while _budget_excess(v, p, b, hi, m) > 0.0:
        hi *= 2.0
    for k in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _budget_excess(v, p, b, mid, m) > 0.0:
            lo = mid
        else:
            hi = mid
    for j in range(m):
        if v[j] - hi * p[j] > 0.0 and p[j] > 0.0:
            num += p[j] * v[j]
            den += p[j] * p[j]
    theta = (num - b) / den if den > 0.0 else hi
    for j in range(m):
        t = v[j] - theta * p[j]
        out[j] = t if t > 0.0 else 0.0
    _finish(out, p, b, m)


cdef int _dykstra(const double[::1] v, const double[::1] p, double b, double tol, int max_iter,
                  double[::1] out, double[::1] inc_a, double[::1] inc_b, double[::1] y,
                  int* cycles, double* residual) noexcept nogil:
    cdef Py_ssize_t m = v.shape[0]
    cdef Py_ssize_t j
    cdef int k
    cdef double pp = _dot(p, p, m)
    cdef double s, shift, change, viol, xn, z, t, scale
    if pp == 0.0:
        for j in range(m):
            out[j] = v[j] if v[j] > 0.0 else 0.0
        cycles[0] = 0
        residual[0] = 0.0
        return 1
    scale = 1.0
    for j in range(m):
        out[j] = v[j]
        inc_a[j] = 0.0
        inc_b[j] = 0.0
        if fabs(v[j]) > scale:
            scale = fabs(v[j])
    tol = tol * scale
    residual[0] = INFINITY
    for k in range(1, max_iter + 1):
        s = 0.0
        for j in range(m):
            t = out[j] + inc_a[j]
            y[j] = t if t > 0.0 else 0.0
            inc_a[j] = t - y[j]
            s += p[j] * (y[j] + inc_b[j])
        shift = (s - b) / pp if s > b else 0.0
        change = 0.0
        viol = 0.0
        for j in range(m):
            z = y[j] + inc_b[j]
            xn = z - shift * p[j] if s > b else z
            inc_b[j] = z - xn
            if fabs(xn - out[j]) > change:
                change = fabs(xn - out[j])
            if -xn > viol:
                viol = -xn
            out[j] = xn
        residual[0] = change if change > viol else viol
        if change < tol and viol <= tol:
            _finish(out, p, b, m)
            cycles[0] = k
            return 1
    # stalled on a near-parallel face pair; finish exactly
    _exact(v, p, b, out, m)
    cycles[0] = max_iter
    return 1


cdef int _pocs(const double[::1] v, const double[::1] p, double b, double tol, int max_iter,
               double[::1] out, double[::1] y, int* cycles, double* residual) noexcept nogil:
    cdef Py_ssize_t m = v.shape[0]
    cdef Py_ssize_t j
    cdef int k
    cdef double pp = _dot(p, p, m)
    cdef double s, shift, change, viol, z, scale
    if pp == 0.0:
        for j in range(m):
            out[j] = v[j] if v[j] > 0.0 else 0.0
        cycles[0] = 0
        residual[0] = 0.0
        return 1
    scale = 1.0
    for j in range(m):
        out[j] = v[j]
        if fabs(v[j]) > scale:
            scale = fabs(v[j])
    tol = tol * scale
    residual[0] = INFINITY
    for k in range(1, max_iter + 1):
        s = 0.0
        for j in range(m):
            y[j] = out[j] if out[j] > 0.0 else 0.0
            s += p[j] * y[j]
        shift = (s - b) / pp if s > b else 0.0
        change = 0.0
        viol = 0.0
        for j in range(m):
            z = y[j] - shift * p[j] if s > b else y[j]
            if fabs(z - out[j]) > change:
                change = fabs(z - out[j])
            if -z > viol:
                viol = -z
            out[j] = z
        residual[0] = change if change > viol else viol
        if change < tol and viol <= tol:
            _finish(out, p, b, m)
            cycles[0] = k
            return 1
    _finish(out, p, b, m)
    cycles[0] = max_iter
    return 1


def budget_exact(v, p, double b):
    cdef double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    out = np.empty(vv.shape[0])
    _exact(vv, pv, b, out, vv.shape[0])
    return out


def budget_dykstra(v, p, double b, double tol, int max_iter):
    cdef double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef Py_ssize_t m = vv.shape[0]
    out = np.empty(m)
    cdef double[::1] o = out
    cdef double[::1] a = np.empty(m)
    cdef double[::1] c = np.empty(m)
    cdef double[::1] y = np.empty(m)
    cdef int cycles = 0
    cdef double residual = 0.0
    cdef int ok = _dykstra(vv, pv, b, tol, max_iter, o, a, c, y, &cycles, &residual)
    return out, bool(ok), cycles, residual


def budget_pocs(v, p, double b, double tol, int max_iter):
    cdef double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef Py_ssize_t m = vv.shape[0]
    out = np.empty(m)
    cdef double[::1] o = out
    cdef double[::1] y = np.empty(m)
    cdef int cycles = 0
    cdef double residual = 0.0
    cdef int ok = _pocs(vv, pv, b, tol, max_iter, o, y, &cycles, &residual)
    return out, bool(ok), cycles, residual


cdef int _alloc_gradient(int kind, const double[::1] w, double b, const double[::1] x,
                         double delta, double[::1] g) noexcept nogil:
    cdef Py_ssize_t m = w.shape[0]
    cdef Py_ssize_t j, k
    cdef double u, denom, best, r, xc, logu
    if kind == 0:
        denom = _dot(w, x, m) + delta
        if not denom > 0.0:
            return 0
        for j in range(m):
            g[j] = (b / denom) * w[j]
        return 1
    if kind == 1:
        logu = 0.0
        for j in range(m):
            if w[j] > 0.0:
                xc = x[j] if x[j] > _CD_FLOOR else _CD_FLOOR
                logu += w[j] * log(xc)
        u = exp(logu)
        denom = u + delta
        if not denom > 0.0:
            return 0
        for j in range(m):
            xc = x[j] if x[j] > _CD_FLOOR else _CD_FLOOR
            g[j] = (b / denom) * w[j] * u / xc
        return 1
    k = -1
    best = INFINITY
    for j in range(m):
        if w[j] > 0.0:
            r = x[j] / w[j]
            if r < best:
                best = r
                k = j
    denom = best + delta
    if k < 0 or not denom > 0.0:
        return 0
    for j in range(m):
        g[j] = 0.0
    g[k] = b / denom / w[k]
    return 1


def alloc_gradient(int kind, w, double b, x, double delta):
    cdef double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty(wv.shape[0])
    cdef double[::1] g = out
    if not _alloc_gradient(kind, wv, b, xv, delta, g):
        return None
    return out


def mbrd(int kind, params, budgets, p0, x0, eta_p, eta_x, double delta, int mode,
         bint lagged, double tol, int max_iter):
    cdef double[:, ::1] W = np.ascontiguousarray(params, dtype=np.float64)
    cdef double[::1] B = np.ascontiguousarray(budgets, dtype=np.float64)
    cdef double[::1] EP = np.ascontiguousarray(eta_p, dtype=np.float64)
    cdef double[::1] EX = np.ascontiguousarray(eta_x, dtype=np.float64)
    cdef Py_ssize_t n = W.shape[0]
    cdef Py_ssize_t m = W.shape[1]
    cdef Py_ssize_t T = EP.shape[0]
    prices_arr = np.zeros((T + 1, m))
    allocs_arr = np.zeros((T + 1, n, m))
    used_arr = np.zeros((T, m))
    cdef double[:, ::1] P = prices_arr
    cdef double[:, :, ::1] A = allocs_arr
    cdef double[:, ::1] U = used_arr
    cdef double[::1] p = np.array(p0, dtype=np.float64)
    cdef double[::1] p_prev = np.array(p0, dtype=np.float64)
    cdef double[::1] p_new = np.empty(m)
    cdef double[:, ::1] X = np.ascontiguousarray(np.array(x0, dtype=np.float64))
    cdef double[:, ::1] Xn = np.empty((n, m))
    cdef double[::1] g = np.empty(m)
    cdef double[::1] target = np.empty(m)
    cdef double[::1] row = np.empty(m)
    cdef double[::1] wa = np.empty(m)
    cdef double[::1] wb = np.empty(m)
    cdef double[::1] wy = np.empty(m)
    cdef double[::1] pc
    cdef Py_ssize_t t, i, j
    cdef double col, val, residual = 0.0
    cdef int cycles = 0, ok
    cdef bint finite
    for j in range(m):
        P[0, j] = p[j]
        for i in range(n):
            A[0, i, j] = X[i, j]
    for t in range(T):
        for j in range(m):
            col = 0.0
            for i in range(n):
                col += X[i, j]
            val = p[j] + EP[t] * (col - 1.0)
            p_new[j] = val if val > 0.0 else 0.0
        pc = p_prev if lagged else p
        for i in range(n):
            if not _alloc_gradient(kind, W[i], B[i], X[i], delta, g):
                return prices_arr[: t + 1], allocs_arr[: t + 1], used_arr[:t], 2, t
            finite = True
            for j in range(m):
                target[j] = X[i, j] + EX[t] * g[j]
                if not isfinite(target[j]):
                    finite = False
            if not finite:
                return prices_arr[: t + 1], allocs_arr[: t + 1], used_arr[:t], 3, t
            if mode == 0:
                ok = _dykstra(target, pc, B[i], tol, max_iter, row, wa, wb, wy, &cycles, &residual)
            else:
                ok = _pocs(target, pc, B[i], tol, max_iter, row, wy, &cycles, &residual)
            if not ok:
                return prices_arr[: t + 1], allocs_arr[: t + 1], used_arr[:t], 1, t
            for j in range(m):
                Xn[i, j] = row[j]
        for j in range(m):
            U[t, j] = pc[j]
            p_prev[j] = p[j]
            p[j] = p_new[j]
            P[t + 1, j] = p[j]
            for i in range(n):
                X[i, j] = Xn[i, j]
                A[t + 1, i, j] = Xn[i, j]
    return prices_arr, allocs_arr, used_arr, 0, T


cdef double _log_utility(int kind, const double[::1] w, double b, const double[::1] p) noexcept nogil:
    cdef Py_ssize_t m = w.shape[0]
    cdef Py_ssize_t j
    cdef double best, total, s
    if kind == 0:
        best = -INFINITY
        for j in range(m):
            if w[j] > 0.0:
                if p[j] <= 0.0:
                    return INFINITY
                if w[j] / p[j] > best:
                    best = w[j] / p[j]
        return log(b * best)
    if kind == 1:
        total = 0.0
        for j in range(m):
            if w[j] > 0.0:
                if p[j] <= 0.0:
                    return INFINITY
                total += w[j] * log(b * w[j] / p[j])
        return total
    s = _dot(w, p, m)
    if s <= 0.0:
        return INFINITY
    return log(b / s)


cdef int _demand_add(int kind, const double[::1] w, double b, const double[::1] p,
                     double[::1] acc) noexcept nogil:
    # adds the buyer's demand into acc; 0 when demand is unbounded
    cdef Py_ssize_t m = w.shape[0]
    cdef Py_ssize_t j, k
    cdef double best, r, s
    if kind == 0:
        k = -1
        best = -INFINITY
        for j in range(m):
            if w[j] > 0.0:
                if p[j] <= 0.0:
                    return 0
                r = w[j] / p[j]
                if r > best:
                    best = r
                    k = j
        if k < 0:
            return 0
        acc[k] += b / p[k]
        return 1
    if kind == 1:
        for j in range(m):
            if w[j] > 0.0:
                if p[j] <= 0.0:
                    return 0
                acc[j] += b * w[j] / p[j]
        return 1
    s = _dot(w, p, m)
    if s <= 0.0:
        return 0
    for j in range(m):
        acc[j] += w[j] * (b / s)
    return 1


cdef double _market_value(int kind, const double[:, ::1] W, const double[::1] B,
                          const double[::1] p, double delta) noexcept nogil:
    cdef Py_ssize_t n = W.shape[0]
    cdef Py_ssize_t m = W.shape[1]
    cdef Py_ssize_t i, j
    cdef double total = 0.0, lu
    for j in range(m):
        total += p[j]
    for i in range(n):
        lu = _log_utility(kind, W[i], B[i], p)
        if lu == INFINITY:
            return INFINITY
        if delta == 0.0:
            total += B[i] * lu
        else:
            total += B[i] * log(exp(lu) + delta)
    return total


def buyer_log_utility(int kind, w, double b, p):
    cdef double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    return _log_utility(kind, wv, b, pv)


def buyer_demand(int kind, w, double b, p):
    cdef double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    out = np.zeros(wv.shape[0])
    cdef double[::1] o = out
    if not _demand_add(kind, wv, b, pv, o):
        return None
    return out


def market_value(int kind, params, budgets, p, double delta):
    cdef double[:, ::1] W = np.ascontiguousarray(params, dtype=np.float64)
    cdef double[::1] B = np.ascontiguousarray(budgets, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    return _market_value(kind, W, B, pv, delta)


def market_values(int kind, params, budgets, P, double delta):
    cdef double[:, ::1] W = np.ascontiguousarray(params, dtype=np.float64)
    cdef double[::1] B = np.ascontiguousarray(budgets, dtype=np.float64)
    cdef double[:, ::1] PV = np.ascontiguousarray(P, dtype=np.float64)
    out = np.empty(PV.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t k
    for k in range(PV.shape[0]):
        o[k] = _market_value(kind, W, B, PV[k], delta)
    return out


def reference_descent(int kind, params, budgets, p0, long iters, double c, double floor):
    cdef double[:, ::1] W = np.ascontiguousarray(params, dtype=np.float64)
    cdef double[::1] B = np.ascontiguousarray(budgets, dtype=np.float64)
    cdef Py_ssize_t n = W.shape[0]
    cdef Py_ssize_t m = W.shape[1]
    cdef double[::1] p = np.array(p0, dtype=np.float64)
    best_arr = np.array(p0, dtype=np.float64)
    cdef double[::1] best_p = best_arr
    cdef double[::1] acc = np.zeros(m)
    cdef double[::1] dem = np.empty(m)
    cdef double best_val = INFINITY, val, step, q
    cdef long t
    cdef Py_ssize_t i, j
    cdef int ok
    for t in range(1, iters + 1):
        val = 0.0
        for j in range(m):
            val += p[j]
            dem[j] = 0.0
        ok = 1
        for i in range(n):
            if not _demand_add(kind, W[i], B[i], p, dem):
                ok = 0
                break
            val += B[i] * _log_utility(kind, W[i], B[i], p)
        if ok and val < best_val:
            best_val = val
            for j in range(m):
                best_p[j] = p[j]
        step = c / sqrt(<double>t)
        for j in range(m):
            acc[j] += p[j]
            if ok:
                q = p[j] - step * (1.0 - dem[j])
            else:
                q = p[j] + step
            p[j] = q if q > floor else floor
    avg = np.asarray(acc) / iters
    avg_val = _market_value(kind, W, B, avg, 0.0)
    return best_arr, best_val, avg, avg_val
