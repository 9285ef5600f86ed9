"""Robust POET under approximate factor models, and factor-adjusted FDP estimation."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.stats import norm as _gauss

from .exceptions import ConfigurationError
from .linalg import check_data, check_symmetric, eig_sym, symmetrize
from .m_estimators import huber_location
from .tuning import adaptive_elementwise_truncated, adaptive_huber_covariance

logger = logging.getLogger(__name__)

__all__ = [
    "FactorFit",
    "FdpCurve",
    "estimate_fdp",
    "factor_count_ratio",
    "poet_threshold",
    "robust_mean",
    "robust_poet",
]

EPS_FLOOR = 1e-8

PILOTS = {
    "adaptive_huber": adaptive_huber_covariance,
    "adaptive_truncated": adaptive_elementwise_truncated,
}


@dataclass
class FactorFit:
    """Low-rank-plus-sparse decomposition returned by :func:`robust_poet`."""

    r: int
    lambdas: NDArray[np.float64]
    loadings: NDArray[np.float64]
    sigma_eps: NDArray[np.float64]
    sigma_total: NDArray[np.float64]
    low_rank: NDArray[np.float64]
    floored: NDArray[np.int64] = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def poet_threshold(n: int, d: int, C: float = 1.0) -> float:
    """``C * (sqrt(log d / n) + 1 / sqrt(d))``."""
    return float(C * (np.sqrt(np.log(d) / n) + 1.0 / np.sqrt(d)))


def factor_count_ratio(pilot: ArrayLike) -> int:
    """Eigenvalue-ratio guess ``argmax_l lambda_l / lambda_{l+1}`` over ``l <= d/2``.

    Only a suggestion; nothing in this module applies it automatically.
    """
    lam = eig_sym(check_symmetric(pilot)).lambdas
    kmax = max(lam.size // 2, 1)
    lam = lam[: kmax + 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = lam[:-1] / lam[1:]
    ratios[~(lam[1:] > 0)] = -np.inf
    return int(np.argmax(ratios)) + 1


def robust_poet(pilot: ArrayLike, r: int, threshold_lambda: float) -> FactorFit:
    """Principal orthogonal complement thresholding on a robust pilot.

    The top ``r`` eigenpairs give the low-rank part. The remainder keeps
    its diagonal (floored at ``1e-8``) and has each off-diagonal entry
    soft-thresholded at ``lambda * sqrt(s_kk s_ll)``.
    """
    S = check_symmetric(pilot)
    d = S.shape[0]
    if not 1 <= r < d:
        raise ConfigurationError(f"need 1 <= r < d, got r={r}, d={d}")
    if not threshold_lambda >= 0:
        raise ConfigurationError("threshold must be non-negative")
    lam, V = eig_sym(S)
    lam, V = lam[:r], V[:, :r]
    if not lam[-1] > 0:
        raise ConfigurationError(f"eigenvalue {r} of the pilot is {lam[-1]:.3g}; no factor structure")
    low = symmetrize((V * lam) @ V.T)
    resid = S - low
    diag = np.diag(resid).copy()
    floored = np.flatnonzero(diag < EPS_FLOOR)
    if floored.size:
        logger.info("flooring %d residual variances at %g", floored.size, EPS_FLOOR)
        diag[floored] = EPS_FLOOR
    thr = threshold_lambda * np.sqrt(np.outer(diag, diag))
    eps = np.sign(resid) * np.maximum(np.abs(resid) - thr, 0.0)
    np.fill_diagonal(eps, diag)
    eps = symmetrize(eps)
    return FactorFit(
        r=r,
        lambdas=lam,
        loadings=V * np.sqrt(lam),
        sigma_eps=eps,
        sigma_total=low + eps,
        low_rank=low,
        floored=floored,
    )


def robust_mean(x: ArrayLike, tau: float) -> float:
    """Huber location of ``x`` at level ``tau``; ``inf`` gives the mean."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("x must be non-empty")
    if np.isinf(tau):
        return float(x.mean())
    return huber_location(x, tau)


@dataclass
class FdpCurve:
    z_grid: NDArray[np.float64]
    fdp_hat: NDArray[np.float64]
    R: NDArray[np.int64]
    statistics: NDArray[np.float64]
    floored: NDArray[np.int64] = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def to_csv(self, path=None) -> str:
        """Columns ``z, R, fdp_hat``; returns the text and writes it if ``path`` is set."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["z", "R", "fdp_hat"])
        for z, r, f in zip(self.z_grid, self.R, self.fdp_hat):
            w.writerow([repr(float(z)), int(r), repr(float(f))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def fdp_from_parts(z_grid, stats, shift, sd) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
    """``(1/R(z)) sum_k [Phi((-z + shift_k)/sd_k) + Phi((-z - shift_k)/sd_k)]`` with 0/0 = 0."""
    z = np.asarray(z_grid, dtype=np.float64)
    absT = np.sort(np.abs(stats))
    R = absT.size - np.searchsorted(absT, z, side="left")
    num = (
        _gauss.cdf((-z[:, None] + shift[None, :]) / sd[None, :])
        + _gauss.cdf((-z[:, None] - shift[None, :]) / sd[None, :])
    ).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        fdp = np.where(R > 0, num / np.maximum(R, 1), 0.0)
    return np.minimum(fdp, 1.0), R.astype(np.int64)


def estimate_fdp(
    X: ArrayLike,
    r: int,
    z_grid: ArrayLike,
    *,
    pilot: str | ArrayLike = "adaptive_huber",
) -> FdpCurve:
    """Approximate false discovery proportion for factor-adjusted mean tests.

    Test statistics are ``T_k = sqrt(n) * mu_k`` with ``mu_k`` the Huber
    mean of column ``k`` at ``tau_k = sqrt(s_kk) sqrt(n / log(n d))``. The
    loadings ``B = V_r Lambda_r^(1/2)`` and the factor mean
    ``u = sqrt(n) (B^T B)^-1 B^T xbar`` come from the pilot covariance;
    residual variances ``s_kk - ||b_k||^2`` are floored at ``1e-8``.

    ``pilot`` names one of the adaptive estimators or is a ready matrix.
    """
    X = check_data(X)
    n, d = X.shape
    if not 1 <= r < d:
        raise ConfigurationError(f"need 1 <= r < d, got r={r}, d={d}")
    z = np.asarray(z_grid, dtype=np.float64).ravel()
    if np.any(z < 0) or np.any(np.diff(z) < 0):
        raise ConfigurationError("z_grid must be non-negative and ascending")
    if isinstance(pilot, str):
        if pilot not in PILOTS:
            raise ConfigurationError(f"unknown pilot {pilot!r}; choose from {sorted(PILOTS)}")
        S = PILOTS[pilot](X)
    else:
        S = check_symmetric(pilot)
    lam, V = eig_sym(S)
    if not lam[r - 1] > 0:
        raise ConfigurationError(f"eigenvalue {r} of the pilot is not positive")
    B = V[:, :r] * np.sqrt(lam[:r])
    BtB = B.T @ B
    if np.linalg.cond(BtB) > 1e12:
        raise ConfigurationError("estimated loadings are rank deficient")
    u = np.sqrt(n) * np.linalg.solve(BtB, B.T @ X.mean(axis=0))
    sdiag = np.diag(S)
    scale = np.sqrt(n / np.log(n * d))
    T = np.array(
        [np.sqrt(n) * robust_mean(X[:, k], np.sqrt(max(sdiag[k], 0.0)) * scale if sdiag[k] > 0 else np.inf)
         for k in range(d)]
    )
    sig_eps = sdiag - np.sum(B * B, axis=1)
    floored = np.flatnonzero(sig_eps < EPS_FLOOR)
    if floored.size:
        logger.info("flooring %d residual variances at %g", floored.size, EPS_FLOOR)
        sig_eps[floored] = EPS_FLOOR
    fdp, R = fdp_from_parts(z, T, B @ u, np.sqrt(sig_eps))
    return FdpCurve(z_grid=z, fdp_hat=fdp, R=R, statistics=T, floored=floored)
