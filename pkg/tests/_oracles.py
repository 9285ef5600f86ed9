"""Independent reference solvers used by the tests.

None of these share code with the package: they are slow, simple
algorithms whose correctness is easy to see.
"""

import numpy as np
from scipy.optimize import brentq

_INVPHI = (np.sqrt(np.longdouble(5)) - 1) / 2


def huber_objective_ld(z, theta, tau):
    """Huber objective in extended precision."""
    r = np.abs(z.astype(np.longdouble) - theta)
    tau = np.longdouble(tau)
    return np.sum(np.where(r <= tau, r * r / 2, tau * r - tau * tau / 2))


def golden_huber_location(z, tau, iters=200):
    """Golden-section minimisation of the Huber objective on ``[min z, max z]``.

    The objective is evaluated in ``long double``, which pushes the
    flat-minimum resolution limit well below 1e-8 for unit-scale data.
    """
    lo, hi = np.longdouble(z.min()), np.longdouble(z.max())
    c = hi - _INVPHI * (hi - lo)
    d = lo + _INVPHI * (hi - lo)
    fc, fd = huber_objective_ld(z, c, tau), huber_objective_ld(z, d, tau)
    for _ in range(iters):
        if hi - lo <= 1e-15 * max(1.0, abs(float(hi))):
            break
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - _INVPHI * (hi - lo)
            fc = huber_objective_ld(z, c, tau)
        else:
            lo, c, fc = c, d, fd
            d = lo + _INVPHI * (hi - lo)
            fd = huber_objective_ld(z, d, tau)
    return float((lo + hi) / 2)


def pair_products(X, k, l):
    iu, ju = np.triu_indices(X.shape[0], 1)
    return 0.5 * (X[iu, k] - X[ju, k]) * (X[iu, l] - X[ju, l])


def bisect_truncation_tau(z, rhs):
    """Root in ``tau`` of ``mean(min(z^2, tau^2)) / tau^2 = rhs`` by Brent's method."""
    z2 = z * z

    def f(tau):
        return np.mean(np.minimum(z2, tau * tau)) / (tau * tau) - rhs

    hi = np.sqrt(z2.sum() / (rhs * z.size)) * 2 + 1e-300
    lo = np.sqrt(z2[z2 > 0].min())
    return brentq(f, lo * (1 - 1e-12), hi, xtol=1e-300, rtol=1e-15, maxiter=500)


def dtrace_coordinate_descent(S, lam, sweeps=20000, tol=1e-15):
    """Cyclic exact coordinate minimisation of the penalised D-trace loss.

    Variables are the diagonal entries and the symmetric off-diagonal
    pairs. Along each coordinate the smooth part is quadratic, so the
    exact minimiser is a soft-threshold.
    """
    d = S.shape[0]
    Theta = np.diag(1.0 / np.diag(S))

    def smooth(T):
        return 0.5 * np.sum((T @ T) * S) - np.trace(T)

    coords = [(k, k) for k in range(d)] + [(k, l) for k in range(d) for l in range(k + 1, d)]
    for _ in range(sweeps):
        moved = 0.0
        for k, l in coords:
            E = np.zeros((d, d))
            E[k, l] = E[l, k] = 1.0
            f0, fp, fm = smooth(Theta), smooth(Theta + E), smooth(Theta - E)
            a = fp + fm - 2 * f0  # second derivative along E
            b = (fp - fm) / 2  # first derivative at the current point
            x = Theta[k, l]
            if k == l:
                new = x - b / a
            else:
                pen = 2 * lam  # both (k, l) and (l, k) are penalised
                u = a * x - b
                new = np.sign(u) * max(abs(u) - pen, 0.0) / a
            moved = max(moved, abs(new - x))
            Theta[k, l] = Theta[l, k] = new
        if moved < tol:
            break
    return Theta
