"""Compiled per-entry kernels.

Every element-wise estimator works on the pair products
``z_p = (x_ik - x_jk)(x_il - x_jl) / 2`` for one entry ``(k, l)`` at a
time. The kernels refill a length-``N`` buffer per entry instead of
storing the ``N x d`` difference matrix.

Scalar solvers return ``nan`` (or a negative status) instead of raising
so they can run inside ``prange`` loops; the Python wrappers translate
status codes into exceptions.
"""

import numpy as np
from numba import njit, prange

# Status codes shared with the Python layer.
OK = 0
NO_SOLUTION = 1
NOT_CONVERGED = 2

# Reassociation lets LLVM vectorise the reductions; infinities stay legal
# because tau = inf is a valid "no truncation" input.
FAST = {"reassoc", "contract", "nsz", "arcp"}


@njit(cache=True, fastmath=FAST)
def fill_products(Xt, k, l, out):
    """Write the pair products for entry (k, l) into ``out``; ``Xt`` is (d, n).

    Returns the sum of squares, which the truncation solver needs anyway.
    """
    xk = Xt[k]
    xl = Xt[l]
    n = xk.shape[0]
    p = 0
    total = 0.0
    for i in range(n - 1):
        a = xk[i]
        b = xl[i]
        m = n - i - 1
        seg = out[p:p + m]
        for j in range(m):
            v = 0.5 * (a - xk[i + 1 + j]) * (b - xl[i + 1 + j])
            seg[j] = v
            total += v * v
        p += m
    return total


@njit(cache=True, fastmath=FAST)
def truncated_mean(z, tau):
    s = 0.0
    for v in z:
        s += min(max(v, -tau), tau)
    return s / z.shape[0]


@njit(cache=True, fastmath=FAST)
def _below_and_count(z, u):
    """``sum(z^2 for z^2 < u)`` and ``#{z^2 >= u}`` in one branch-free pass."""
    s = 0.0
    c = 0.0
    for v in z:
        v2 = v * v
        s += min(v2, u)
        c += 1.0 if v2 >= u else 0.0
    return s - c * u, c


@njit(cache=True)
def solve_truncation(z, total, target, u0):
    """Root ``u = tau**2`` of ``sum(min(z^2, u)) / u = target``.

    ``target`` is ``N`` times the right-hand side and ``total`` the sum of
    squares of ``z``. In ``w = 1/u`` the left side is concave, increasing
    and piecewise linear, so one Newton step from any start lands at or
    below the root in ``w``; from there the iterates increase monotonically
    and the step is exact once the active piece is found. ``u0`` is a
    starting guess (``nan`` for none).

    A root exists iff more than ``target`` values are non-zero. Without one
    the iterates run ``u`` down to 0, which is how failure is detected
    without a separate counting pass. Returns ``(u, passes)``; ``u`` is
    ``nan`` when no root exists.
    """
    if not (target > 0.0) or not (total > 0.0):
        return np.nan, 0
    safe = total / target
    at_safe = not (u0 > 0.0 and u0 < np.inf)
    u = safe if at_safe else u0
    first = True
    it = 0
    while it < 10000:
        s, c = _below_and_count(z, u)
        it += 1
        if c >= target:
            if at_safe:
                return np.nan, it
            # Pilot landed beyond the root with too many clipped values.
            u = safe
            at_safe = True
            continue
        u_new = s / (target - c)
        if not (u_new > 0.0):
            return np.nan, it
        if not first and not (u_new < u * (1.0 - 4e-16)):
            break
        first = False
        at_safe = False
        u = u_new
    return u, it


PILOT_SIZE = 1024


@njit(cache=True)
def pilot_u(z, target, size):
    """Starting guess from an evenly strided subsample of about ``size`` values."""
    N = z.shape[0]
    stride = N // size
    if stride < 4:
        return np.nan
    zs = np.ascontiguousarray(z[::stride])
    total = 0.0
    for v in zs:
        total += v * v
    u, _ = solve_truncation(zs, total, target * zs.shape[0] / N, np.nan)
    return u


@njit(cache=True)
def huber_score(z, theta, tau):
    g = 0.0
    for v in z:
        r = v - theta
        if r > tau:
            g += tau
        elif r < -tau:
            g -= tau
        else:
            g += r
    return g


@njit(cache=True)
def huber_root(z, tau, theta0, rtol, max_iter):
    """Root of the non-increasing score ``sum psi_tau(z - theta)``.

    Safeguarded Newton: on each linear piece of the score the Newton step
    is exact, and any step leaving the current bracket is replaced by
    bisection. Returns ``(theta, iterations, bracket_width, status)``.
    """
    lo = z[0]
    hi = z[0]
    for v in z:
        if v < lo:
            lo = v
        if v > hi:
            hi = v
    if hi == lo:
        return lo, 0, 0.0, OK
    tol = rtol * (hi - lo)
    theta = theta0
    if not (theta > lo and theta < hi):
        theta = 0.5 * (lo + hi)
    for it in range(1, max_iter + 1):
        inside = 0
        s_in = 0.0
        n_hi = 0
        n_lo = 0
        for v in z:
            r = v - theta
            if r > tau:
                n_hi += 1
            elif r < -tau:
                n_lo += 1
            else:
                inside += 1
                s_in += v
        g = s_in - inside * theta + tau * (n_hi - n_lo)
        if g > 0.0:
            lo = theta
        elif g < 0.0:
            hi = theta
        else:
            return theta, it, hi - lo, OK
        if inside > 0:
            cand = (s_in + tau * (n_hi - n_lo)) / inside
        else:
            cand = np.nan
        if abs(cand - theta) <= 4e-16 * abs(theta):
            return cand, it, hi - lo, OK
        if not (cand > lo and cand < hi):
            cand = 0.5 * (lo + hi)
        if hi - lo <= tol:
            return cand, it, hi - lo, OK
        theta = cand
    return theta, max_iter, hi - lo, NOT_CONVERGED


@njit(cache=True)
def mean(z):
    s = 0.0
    for v in z:
        s += v
    return s / z.shape[0]


@njit(parallel=True, cache=True)
def elementwise_truncated(Xt, gamma):
    d, n = Xt.shape
    N = n * (n - 1) // 2
    out = np.zeros((d, d))
    for k in prange(d):
        z = np.empty(N)
        for l in range(k, d):
            fill_products(Xt, k, l, z)
            out[k, l] = truncated_mean(z, gamma[k, l])
            out[l, k] = out[k, l]
    return out


@njit(parallel=True, cache=True)
def adaptive_truncated(Xt, rhs):
    """Element-wise truncation with per-entry roots of the truncated-moment equation.

    Entries without a root fall back to no truncation (status 1).
    Returns ``(estimate, tau, status)``.
    """
    d, n = Xt.shape
    N = n * (n - 1) // 2
    out = np.zeros((d, d))
    taus = np.zeros((d, d))
    status = np.zeros((d, d), dtype=np.int64)
    target = rhs * N
    for k in prange(d):
        z = np.empty(N)
        for l in range(k, d):
            total = fill_products(Xt, k, l, z)
            u, _ = solve_truncation(z, total, target, pilot_u(z, target, PILOT_SIZE))
            if np.isnan(u):
                tau = np.inf
                status[k, l] = NO_SOLUTION
                status[l, k] = NO_SOLUTION
            else:
                tau = np.sqrt(u)
            taus[k, l] = tau
            taus[l, k] = tau
            out[k, l] = truncated_mean(z, tau)
            out[l, k] = out[k, l]
    return out, taus, status


@njit(parallel=True, cache=True)
def elementwise_huber(Xt, gamma, rtol, max_iter):
    """Per-entry Huber locations; returns ``(estimate, iterations, status)``."""
    d, n = Xt.shape
    N = n * (n - 1) // 2
    out = np.zeros((d, d))
    iters = np.zeros((d, d), dtype=np.int64)
    status = np.zeros((d, d), dtype=np.int64)
    for k in prange(d):
        z = np.empty(N)
        for l in range(k, d):
            fill_products(Xt, k, l, z)
            th, it, _, st = huber_root(z, gamma[k, l], mean(z), rtol, max_iter)
            out[k, l] = th
            out[l, k] = th
            iters[k, l] = it
            iters[l, k] = it
            status[k, l] = st
            status[l, k] = st
    return out, iters, status


@njit(parallel=True, cache=True)
def elementwise_huber_path(Xt, taus, rtol, max_iter):
    """Huber estimates for a decreasing list of scalar ``taus``, warm-started.

    Returns an array of shape ``(len(taus), d, d)``; entries that fail to
    converge keep their last iterate.
    """
    d, n = Xt.shape
    N = n * (n - 1) // 2
    T = taus.shape[0]
    out = np.zeros((T, d, d))
    for k in prange(d):
        z = np.empty(N)
        for l in range(k, d):
            fill_products(Xt, k, l, z)
            th = mean(z)
            for t in range(T):
                th, _, _, _ = huber_root(z, taus[t], th, rtol, max_iter)
                out[t, k, l] = th
                out[t, l, k] = th
    return out


@njit(cache=True)
def huber_system(z, rhs_n, eps_rel, max_iter, rtol, huber_iter):
    """Alternating solve of the (theta, tau) system for one entry.

    ``rhs_n`` is the right-hand side of the moment equation (with the
    ``n`` denominator). Returns ``(theta, tau, iterations, status)``.
    """
    N = z.shape[0]
    r = np.empty(N)
    theta = mean(z)
    scale = 0.0
    for v in z:
        scale += abs(v)
    eps = eps_rel * scale / N
    target = rhs_n * N
    tau = np.nan
    u = np.nan
    for s in range(1, max_iter + 1):
        total = 0.0
        for p in range(N):
            v = z[p] - theta
            r[p] = v
            total += v * v
        u, _ = solve_truncation(r, total, target, u)
        if np.isnan(u):
            return theta, np.nan, s, NO_SOLUTION
        tau = np.sqrt(u)
        th_new, _, _, st = huber_root(z, tau, theta, rtol, huber_iter)
        if st != OK:
            return th_new, tau, s, NOT_CONVERGED
        if abs(th_new - theta) < eps:
            return th_new, tau, s, OK
        theta = th_new
    return theta, tau, max_iter, NOT_CONVERGED


@njit(parallel=True, cache=True)
def adaptive_huber(Xt, rhs_n, rhs_m, eps_rel, max_iter, rtol, huber_iter):
    """Per-entry adaptive Huber estimates with the fallback hierarchy.

    ``fallback`` codes: 0 none, 1 adaptive truncation, 2 plain mean.
    Returns ``(estimate, tau, iterations, status, fallback)``.
    """
    d, n = Xt.shape
    N = n * (n - 1) // 2
    out = np.zeros((d, d))
    taus = np.zeros((d, d))
    iters = np.zeros((d, d), dtype=np.int64)
    status = np.zeros((d, d), dtype=np.int64)
    fallback = np.zeros((d, d), dtype=np.int64)
    for k in prange(d):
        z = np.empty(N)
        for l in range(k, d):
            total = fill_products(Xt, k, l, z)
            th, tau, it, st = huber_system(z, rhs_n, eps_rel, max_iter, rtol, huber_iter)
            fb = 0
            if st == NO_SOLUTION:
                u, _ = solve_truncation(z, total, rhs_m * N, np.nan)
                if np.isnan(u):
                    fb = 2
                    tau = np.inf
                    th = mean(z)
                else:
                    fb = 1
                    tau = np.sqrt(u)
                    th = truncated_mean(z, tau)
            out[k, l] = th
            out[l, k] = th
            taus[k, l] = tau
            taus[l, k] = tau
            iters[k, l] = it
            iters[l, k] = it
            status[k, l] = st
            status[l, k] = st
            fallback[k, l] = fb
            fallback[l, k] = fb
    return out, taus, iters, status, fallback


@njit(cache=True, fastmath=FAST)
def pair_scatter(X, w):
    """``sum_{i<j} w_ij (x_i - x_j)(x_i - x_j)^T`` with ``w`` in condensed order.

    Cost ``O(N d^2)`` with no ``n x n`` workspace; used when ``d`` is small.
    """
    n, d = X.shape
    acc = np.zeros((d, d))
    y = np.empty(d)
    p = 0
    for i in range(n - 1):
        for j in range(i + 1, n):
            wp = w[p]
            p += 1
            if wp == 0.0:
                continue
            for a in range(d):
                y[a] = X[i, a] - X[j, a]
            for a in range(d):
                ya = wp * y[a]
                for b in range(a, d):
                    acc[a, b] += ya * y[b]
    for a in range(d):
        for b in range(a):
            acc[a, b] = acc[b, a]
    return acc
