"""Huber-type M-estimators and the median-of-means covariance estimator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import _kernels
from .exceptions import ConfigurationError, ConvergenceError
from .linalg import check_data, symmetrize
from .truncation import _as_gamma, spectrum_truncated

__all__ = [
    "HuberConfig",
    "default_mom_groups",
    "elementwise_huber",
    "huber_location",
    "huber_loss",
    "mom_covariance",
    "spectral_huber",
    "spectral_huber_step",
]


@dataclass(frozen=True)
class HuberConfig:
    """Iteration controls shared by the Huber solvers."""

    max_iter: int = 200
    tol: float = 1e-10

    def __post_init__(self):
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be at least 1")
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")


def huber_loss(u: ArrayLike, tau: float) -> NDArray[np.float64] | float:
    """``u^2 / 2`` for ``|u| <= tau`` and ``tau |u| - tau^2 / 2`` beyond."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    u = np.asarray(u, dtype=np.float64)
    a = np.abs(u)
    if np.isinf(tau):
        out = 0.5 * u * u
    else:
        out = np.where(a <= tau, 0.5 * u * u, tau * a - 0.5 * tau * tau)
    return float(out) if out.ndim == 0 else out


def huber_location(z: ArrayLike, tau: float, cfg: HuberConfig | None = None) -> float:
    """Minimiser of ``sum_i huber_loss(z_i - theta, tau)`` over ``theta``.

    The score ``sum psi_tau(z_i - theta)`` is monotone, so the root is
    unique and lies in ``[min z, max z]``.

    Raises
    ------
    ConvergenceError
        If the bracket has not closed after ``cfg.max_iter`` iterations;
        ``residual`` is the final bracket width.
    """
    cfg = cfg or HuberConfig()
    z = np.ascontiguousarray(z, dtype=np.float64).ravel()
    if z.size == 0:
        raise ValueError("z must be non-empty")
    if not tau > 0:
        raise ValueError("tau must be positive")
    theta, _, width, status = _kernels.huber_root(z, float(tau), float(z.mean()), cfg.tol, cfg.max_iter)
    if status != _kernels.OK:
        raise ConvergenceError(f"Huber location did not converge; bracket width {width:.3e}", residual=width)
    return float(theta)


def elementwise_huber(X: ArrayLike, gamma: ArrayLike, cfg: HuberConfig | None = None) -> NDArray[np.float64]:
    """Entrywise Huber M-estimator of the covariance from pair products.

    Entry ``(k, l)`` is :func:`huber_location` of ``Y_k Y_l / 2`` over all
    pairs with robustification level ``gamma[k, l]``.
    """
    cfg = cfg or HuberConfig()
    X = check_data(X)
    G = _as_gamma(gamma, X.shape[1])
    Xt = np.ascontiguousarray((X - X.mean(axis=0)).T)
    est, _, status = _kernels.elementwise_huber(Xt, G, cfg.tol, cfg.max_iter)
    bad = np.argwhere(status != _kernels.OK)
    if bad.size:
        k, l = bad[0]
        raise ConvergenceError(f"Huber location failed for entry ({k}, {l})")
    return est


def _psi_matrices(Y: NDArray[np.float64], M: NDArray[np.float64], tau: float) -> NDArray[np.float64]:
    """Sum over rows ``y`` of ``psi_tau(y y^T / 2 - M)`` (spectral truncation)."""
    A = 0.5 * Y[:, :, None] * Y[:, None, :] - M
    w, V = np.linalg.eigh(A)
    np.clip(w, -tau, tau, out=w)
    return np.einsum("pik,pk,pjk->ij", V, w, V)


def spectral_huber_step(X: ArrayLike, M: ArrayLike, tau: float, chunk: int = 2048) -> NDArray[np.float64]:
    """One gradient step ``M + (1/N) sum psi_tau(Y Y^T / 2 - M)``.

    From ``M = 0`` this is exactly :func:`spectrum_truncated`.
    """
    X = check_data(X)
    M = symmetrize(M)
    if not np.any(M):
        return spectrum_truncated(X, tau)
    return M + _spectral_gradient(X, M, tau, chunk)


def _spectral_gradient(X, M, tau, chunk, pairs=None):
    n, d = X.shape
    iu, ju = np.triu_indices(n, 1) if pairs is None else pairs
    G = np.zeros((d, d))
    for s in range(0, iu.size, chunk):
        Y = X[iu[s:s + chunk]] - X[ju[s:s + chunk]]
        G += _psi_matrices(Y, M, tau)
    return symmetrize(G / iu.size)


def spectral_huber(
    X: ArrayLike,
    tau: float,
    cfg: HuberConfig | None = None,
    *,
    subsample: int | None = None,
    random_state=None,
    return_history: bool = False,
):
    """Spectral Huber M-estimator by unit-step gradient descent.

    Minimises ``tr{(1/N) sum huber_loss(Y Y^T / 2 - M)}`` over symmetric
    ``M``. The iteration starts from :func:`spectrum_truncated` (the first
    step from zero) and stops once ``||grad||_F <= tol (1 + ||M||_F)``.
    Each step needs one eigendecomposition per pair, so this is meant for
    small problems; ``subsample`` draws that many pairs uniformly without
    replacement to cut the cost.

    Parameters
    ----------
    cfg : HuberConfig, optional
        Defaults to ``max_iter=100``, ``tol=1e-8``.
    return_history : bool
        Also return the list of gradient Frobenius norms.
    """
    cfg = cfg or HuberConfig(max_iter=100, tol=1e-8)
    X = check_data(X)
    if not tau > 0:
        raise ValueError("tau must be positive")
    n = X.shape[0]
    Xc = X - X.mean(axis=0)
    pairs = np.triu_indices(n, 1)
    if subsample is not None and subsample < pairs[0].size:
        rng = np.random.default_rng(random_state)
        keep = np.sort(rng.choice(pairs[0].size, size=subsample, replace=False))
        pairs = (pairs[0][keep], pairs[1][keep])
        M = _spectral_gradient(Xc, np.zeros((X.shape[1],) * 2), tau, 2048, pairs)
    else:
        M = spectrum_truncated(Xc, tau)
    if np.isinf(tau):
        return (M, [0.0]) if return_history else M
    history = []
    for _ in range(cfg.max_iter):
        G = _spectral_gradient(Xc, M, tau, 2048, pairs)
        gnorm = float(np.linalg.norm(G))
        history.append(gnorm)
        if gnorm <= cfg.tol * (1.0 + np.linalg.norm(M)):
            return (M, history) if return_history else M
        M = symmetrize(M + G)
    raise ConvergenceError(
        f"spectral Huber descent hit {cfg.max_iter} iterations; gradient norm {history[-1]:.3e}",
        residual=history[-1],
    )


def default_mom_groups(n: int) -> int:
    """``round(sqrt(n) / log n)``, at least 1 and small enough for 2 rows per group."""
    k = int(round(np.sqrt(n) / np.log(n))) if n > 2 else 1
    return int(min(max(k, 1), n // 2))


def mom_covariance(X: ArrayLike, k: int | None = None, ddof: int = 1) -> NDArray[np.float64]:
    """Entrywise median of the sample covariances of ``k`` contiguous row blocks.

    Blocks follow the given row order; the first ``n % k`` blocks get one
    extra row. For even ``k`` the median averages the two middle values.
    ``ddof=1`` makes ``k=1`` coincide with :func:`sample_covariance`.
    """
    X = check_data(X)
    n = X.shape[0]
    k = default_mom_groups(n) if k is None else int(k)
    if k < 1:
        raise ConfigurationError("number of groups must be at least 1")
    if 2 * k > n:
        raise ConfigurationError(f"{k} groups leave fewer than 2 rows per group (n={n})")
    if ddof not in (0, 1):
        raise ConfigurationError("ddof must be 0 or 1")
    covs = []
    for block in np.array_split(X, k):
        Bc = block - block.mean(axis=0)
        covs.append(Bc.T @ Bc / (block.shape[0] - ddof))
    return symmetrize(np.median(np.stack(covs), axis=0))
