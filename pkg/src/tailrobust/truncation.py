"""Element-wise and spectrum-wise truncated covariance estimators.

Both estimators average truncated versions of the pairwise products
``Y Y^T / 2`` with ``Y = x_i - x_j``, so no mean estimate is needed. With
``tau = inf`` they reduce to :func:`~tailrobust.linalg.sample_covariance`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.distance import pdist, squareform

from . import _kernels
from .linalg import check_data, pair_count, sample_covariance, symmetrize

__all__ = [
    "SecondMomentMatrix",
    "elementwise_truncated",
    "pair_laplacian_covariance",
    "psi",
    "spectrum_truncated",
    "theoretical_gamma",
    "theoretical_spectral_tau",
]


def psi(u: ArrayLike, tau: ArrayLike) -> NDArray[np.float64] | float:
    """Truncation operator ``sign(u) * min(|u|, tau)``; ``tau`` may be ``inf``."""
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau <= 0):
        raise ValueError("tau must be positive")
    out = np.clip(u, -tau, tau)
    return float(out) if np.ndim(out) == 0 else out


def _as_gamma(gamma: ArrayLike, d: int) -> NDArray[np.float64]:
    G = np.asarray(gamma, dtype=np.float64)
    if G.ndim == 0:
        G = np.full((d, d), float(G))
    if G.shape != (d, d):
        raise ValueError(f"truncation matrix must be scalar or ({d}, {d}), got {G.shape}")
    if np.any(np.isnan(G)) or np.any(G <= 0):
        raise ValueError("truncation levels must be positive (inf allowed)")
    if not np.array_equal(G, G.T):
        raise ValueError("truncation matrix must be symmetric")
    return G


def elementwise_truncated(X: ArrayLike, gamma: ArrayLike) -> NDArray[np.float64]:
    """Average of ``psi_{tau_kl}(Y_k Y_l / 2)`` over all pairs, entry by entry.

    Parameters
    ----------
    X : array-like of shape (n_samples, n_features)
    gamma : float or array-like of shape (n_features, n_features)
        Symmetric positive truncation levels; ``inf`` disables truncation.
    """
    X = check_data(X)
    G = _as_gamma(gamma, X.shape[1])
    Xt = np.ascontiguousarray((X - X.mean(axis=0)).T)
    return _kernels.elementwise_truncated(Xt, G)


def pair_laplacian_covariance(X: NDArray[np.float64], weights: NDArray[np.float64]) -> NDArray[np.float64]:
    """``(1/N) sum_{i<j} w_ij (x_i - x_j)(x_i - x_j)^T``.

    ``weights`` is the condensed (``pdist`` order) vector of pair weights.
    For wide data the sum is ``X^T L X`` with the graph Laplacian
    ``L = diag(W 1) - W``, which costs ``O(n^2 d + n d^2)`` and never forms
    the pair differences. Narrow data goes through a compiled
    loop over the pairs instead.
    """
    n, d = X.shape
    Xc = np.ascontiguousarray(X - X.mean(axis=0))
    w = np.ascontiguousarray(weights, dtype=np.float64)
    if d <= _SCATTER_MAX_DIM:
        return symmetrize(_kernels.pair_scatter(Xc, w) / pair_count(n))
    W = squareform(w, checks=False)
    r = W.sum(axis=1)
    M = (Xc * r[:, None]).T @ Xc - Xc.T @ (W @ Xc)
    return symmetrize(M / pair_count(n))


_SCATTER_MAX_DIM = 8


def _pair_halfnorms(X: NDArray[np.float64]) -> NDArray[np.float64]:
    """``||x_i - x_j||^2 / 2`` in ``pdist`` order, the eigenvalue of ``Y Y^T / 2``."""
    return 0.5 * pdist(X, "sqeuclidean")


def spectrum_truncated(X: ArrayLike, tau: float) -> NDArray[np.float64]:
    """Average of the spectrally truncated rank-one matrices ``psi_tau(Y Y^T / 2)``.

    Each summand equals ``psi_tau(a) / (2a) * Y Y^T`` with ``a = ||Y||^2 / 2``;
    pairs with ``Y = 0`` contribute the zero matrix.
    """
    X = check_data(X)
    tau = float(tau)
    if not tau > 0:
        raise ValueError("tau must be positive")
    a = _pair_halfnorms(X)
    if tau >= a.max(initial=0.0):
        # nothing is clipped: return the identical U-statistic bit for bit
        return sample_covariance(X)
    return pair_laplacian_covariance(X, _spectral_weights(a, tau))


def _spectral_weights(a: NDArray[np.float64], tau: float) -> NDArray[np.float64]:
    w = np.full_like(a, 0.5)
    big = a > tau
    w[big] = 0.5 * tau / a[big]
    return w


@dataclass(frozen=True)
class SecondMomentMatrix:
    """Entrywise scale of the pair products ``Z = Y_k Y_l / 2``.

    ``convention`` is ``"raw"`` for ``v^2 = E Z^2`` (used to tune the
    truncated estimator) or ``"variance"`` for ``v^2 = var Z`` (used for the
    Huber estimator).
    """

    v: NDArray[np.float64]
    convention: str = "raw"

    def __post_init__(self):
        if self.convention not in ("raw", "variance"):
            raise ValueError("convention must be 'raw' or 'variance'")
        v = symmetrize(np.atleast_2d(np.asarray(self.v, dtype=np.float64)))
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("second moments must be finite and non-negative")
        object.__setattr__(self, "v", v)

    @classmethod
    def from_data(cls, X: ArrayLike, convention: str = "raw") -> "SecondMomentMatrix":
        """Plug-in estimate from the pair products (quadratic in ``n``)."""
        X = check_data(X)
        n, d = X.shape
        iu, ju = np.triu_indices(n, 1)
        v = np.empty((d, d))
        for k in range(d):
            yk = X[iu, k] - X[ju, k]
            for l in range(k, d):
                z = 0.5 * yk * (X[iu, l] - X[ju, l])
                v[k, l] = v[l, k] = np.sqrt(np.var(z) if convention == "variance" else np.mean(z * z))
        return cls(v, convention)


def theoretical_gamma(V: SecondMomentMatrix | ArrayLike, n: int, delta: float) -> NDArray[np.float64]:
    """Truncation levels ``v_kl * sqrt(m / (2 log d + log(1/delta)))``, ``m = n // 2``.

    Zero ``v_kl`` gives ``inf``: a degenerate coordinate needs no clipping.
    """
    v = V.v if isinstance(V, SecondMomentMatrix) else symmetrize(np.atleast_2d(V))
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if n < 2:
        raise ValueError("n must be at least 2")
    d = v.shape[0]
    scale = np.sqrt((n // 2) / (2 * np.log(d) + np.log(1 / delta)))
    with np.errstate(invalid="ignore"):
        gamma = v * scale
    gamma[v == 0] = np.inf
    return gamma


def theoretical_spectral_tau(v: float, n: int, d: int, delta: float) -> float:
    """``v * sqrt(m / (log(2d) + log(1/delta)))`` with ``m = n // 2``."""
    if not v > 0:
        raise ValueError("v must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return float(v * np.sqrt((n // 2) / (np.log(2 * d) + np.log(1 / delta))))
