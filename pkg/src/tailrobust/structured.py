"""Structured covariance and precision estimators built on robust pilots.

* :func:`bandable_covariance` assembles overlapping principal blocks, each
  estimated with the spectrum-wise truncated estimator.
* :func:`lowrank_covariance` soft-thresholds the eigenvalues of a pilot.
* :func:`dtrace_precision` minimises the l1-penalised D-trace loss by
  proximal gradient descent.

Block positions are 0-based: a block ``(p, q)`` covers coordinates
``p, ..., p + q - 1``, clipped to ``[0, d)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import ConfigurationError, ConvergenceError, NoSolutionError
from .linalg import check_data, check_symmetric, eig_sym, symmetrize
from .truncation import spectrum_truncated
from .tuning import solve_spectral_tau

logger = logging.getLogger(__name__)

__all__ = [
    "BandableConfig",
    "DtraceConfig",
    "DtraceResult",
    "bandable_covariance",
    "block_truncated",
    "default_lowrank_gamma",
    "dtrace_kkt_residual",
    "dtrace_objective",
    "dtrace_precision",
    "embed",
    "lowrank_covariance",
]


def _clip_block(p: int, q: int, d: int) -> tuple[int, int]:
    return max(p, 0), min(p + q, d)


def embed(A: ArrayLike, p: int, d: int) -> NDArray[np.float64]:
    """Place the square matrix ``A`` on the diagonal of a ``d x d`` zero matrix.

    ``A[0, 0]`` lands at ``(p, p)``. Rows and columns of ``A`` that fall
    outside ``[0, d)`` are dropped.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    q = A.shape[0]
    if A.shape != (q, q):
        raise ValueError(f"block must be square, got {A.shape}")
    lo, hi = _clip_block(p, q, d)
    if lo >= hi:
        raise ValueError(f"block at {p} of width {q} lies outside [0, {d})")
    out = np.zeros((d, d))
    out[lo:hi, lo:hi] = A[lo - p:hi - p, lo - p:hi - p]
    return out


def _block_t(n: int, d: int, delta: float | None, c0: float) -> float:
    if delta is None:
        return c0 * np.log(n) + np.log(d)
    if not 0 < delta < 1:
        raise ConfigurationError("delta must lie in (0, 1)")
    return float(np.log(1.0 / delta))


def block_truncated(
    X: ArrayLike,
    p: int,
    q: int,
    *,
    tau: float | None = None,
    delta: float | None = None,
    c0: float = 1.0,
) -> NDArray[np.float64]:
    """Spectrum-wise truncated estimate of the principal block ``[p, p + q)``.

    The block is clipped to the available coordinates. Unless ``tau`` is
    given, it solves the spectral tuning equation on the slice with
    confidence ``t = log(1/delta)``, where ``delta`` defaults to
    ``1 / (n^c0 d)``.
    """
    X = check_data(X)
    n, d = X.shape
    lo, hi = _clip_block(p, q, d)
    if lo >= hi:
        raise ValueError(f"block at {p} of width {q} lies outside [0, {d})")
    S = X[:, lo:hi]
    if tau is None:
        tau = solve_spectral_tau(S, t=_block_t(n, d, delta, c0)).tau
    return spectrum_truncated(S, tau)


@dataclass(frozen=True)
class BandableConfig:
    """Bandwidth and confidence settings for :func:`bandable_covariance`.

    Give either ``q`` directly or a decay exponent ``alpha``, in which case
    ``q = round((n / log(n d))^(1 / (2 alpha + 1)))`` clamped to ``[1, d]``.
    """

    q: int | None = None
    alpha: float | None = None
    delta: float | None = None
    c0: float = 1.0

    def __post_init__(self):
        if self.q is None and self.alpha is None:
            raise ConfigurationError("give a bandwidth q or a decay exponent alpha")
        if self.q is not None and self.q < 1:
            raise ConfigurationError("bandwidth q must be at least 1")
        if self.alpha is not None and not self.alpha > 0:
            raise ConfigurationError("alpha must be positive")
        if self.delta is not None and not 0 < self.delta < 1:
            raise ConfigurationError("delta must lie in (0, 1)")
        if not self.c0 > 0:
            raise ConfigurationError("c0 must be positive")

    def bandwidth(self, n: int, d: int) -> int:
        if self.q is not None:
            if self.q > d:
                raise ConfigurationError(f"bandwidth {self.q} exceeds dimension {d}")
            return self.q
        q = round((n / np.log(n * d)) ** (1.0 / (2.0 * self.alpha + 1.0)))
        return int(min(max(q, 1), d))


def bandable_covariance(X: ArrayLike, cfg: BandableConfig) -> NDArray[np.float64]:
    """Robust estimator for bandable covariance matrices.

    Sums the embedded ``2q``-blocks starting at ``j q`` for
    ``j = -1, ..., ceil((d - 1) / q)`` and subtracts the embedded ``q``-blocks
    starting at ``j q`` for ``j = 0, ..., ceil((d - 1) / q)``. Every entry
    with ``|k - l| >= 2q`` is exactly zero.
    """
    X = check_data(X)
    n, d = X.shape
    q = cfg.bandwidth(n, d)
    t = _block_t(n, d, cfg.delta, cfg.c0)
    J = -(-(d - 1) // q)
    cache: dict[tuple[int, int], NDArray[np.float64]] = {}

    def block(p, width):
        key = _clip_block(p, width, d)
        if key[0] >= key[1]:
            return None
        if key not in cache:
            try:
                S = X[:, key[0]:key[1]]
                cache[key] = spectrum_truncated(S, solve_spectral_tau(S, t=t).tau)
            except NoSolutionError as exc:
                raise NoSolutionError(
                    f"tuning failed for block [{key[0]}, {key[1]}): {exc}", deficit=exc.deficit
                ) from exc
        return key, cache[key]

    out = np.zeros((d, d))
    for sign, width, js in ((1.0, 2 * q, range(-1, J + 1)), (-1.0, q, range(0, J + 1))):
        for j in js:
            hit = block(j * q, width)
            if hit is None:
                continue
            (lo, hi), B = hit
            out[lo:hi, lo:hi] += sign * B
    return symmetrize(out)


def lowrank_covariance(pilot: ArrayLike, gamma: float) -> NDArray[np.float64]:
    """Trace-penalised projection ``sum_k max(lambda_k - gamma, 0) v_k v_k^T``.

    This is the minimiser of ``||A - pilot||_F^2 / 2 + gamma ||A||_tr`` over
    positive semi-definite ``A``.
    """
    if not gamma >= 0:
        raise ConfigurationError("gamma must be non-negative")
    lam, V = eig_sym(check_symmetric(pilot))
    shrunk = np.maximum(lam - gamma, 0.0)
    keep = shrunk > 0
    Vk = V[:, keep]
    return symmetrize((Vk * shrunk[keep]) @ Vk.T)


def default_lowrank_gamma(X: ArrayLike, t: float | None = None) -> float:
    """``2 v sqrt((log 2d + t) / m)`` with ``v`` recovered from the spectral tuning solve."""
    X = check_data(X)
    n, d = X.shape
    t = np.log(n) if t is None else float(t)
    ratio = (np.log(2 * d) + t) / (n // 2)
    tau = solve_spectral_tau(X, t=t).tau
    return float(2.0 * tau * ratio)


@dataclass(frozen=True)
class DtraceConfig:
    """Settings for :func:`dtrace_precision`.

    ``step`` defaults to ``1 / lambda_max(pilot)``; steps of ``2 / lambda_max``
    or more are rejected.
    """

    lam: float
    step: float | None = None
    max_iter: int = 5000
    tol: float = 1e-6
    accelerate: bool = False

    def __post_init__(self):
        if not self.lam >= 0:
            raise ConfigurationError("lambda must be non-negative")
        if self.step is not None and not self.step > 0:
            raise ConfigurationError("step must be positive")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be at least 1")
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")


@dataclass
class DtraceResult:
    precision: NDArray[np.float64]
    iterations: int
    kkt_residual: float
    objective: list


def _soft_offdiag(A, thr):
    out = np.sign(A) * np.maximum(np.abs(A) - thr, 0.0)
    np.fill_diagonal(out, np.diag(A))
    return out


def dtrace_objective(Theta: ArrayLike, Sigma: ArrayLike, lam: float) -> float:
    """``<Theta^2, Sigma> / 2 - tr(Theta) + lam * sum_{k != l} |Theta_kl|``."""
    Theta = np.asarray(Theta)
    Sigma = np.asarray(Sigma)
    off = np.abs(Theta).sum() - np.abs(np.diag(Theta)).sum()
    return float(0.5 * np.sum((Theta @ Theta) * Sigma) - np.trace(Theta) + lam * off)


def dtrace_kkt_residual(Theta: ArrayLike, Sigma: ArrayLike, lam: float) -> float:
    """Largest entrywise violation of the subgradient optimality conditions."""
    Theta = np.asarray(Theta)
    G = 0.5 * (Theta @ Sigma + Sigma @ Theta) - np.eye(Theta.shape[0])
    R = np.where(Theta != 0, np.abs(G + lam * np.sign(Theta)), np.maximum(np.abs(G) - lam, 0.0))
    np.fill_diagonal(R, np.abs(np.diag(G)))
    return float(R.max())


def _psd_guard(Sigma, eps=1e-8):
    lam, V = eig_sym(Sigma)
    if lam[-1] >= eps:
        return Sigma, lam[0]
    logger.info("D-trace pilot has eigenvalue %.3e; clipping its spectrum at %.0e", lam[-1], eps)
    lam = np.maximum(lam, eps)
    return symmetrize((V * lam) @ V.T), lam[0]


def dtrace_precision(pilot: ArrayLike, cfg: DtraceConfig, *, return_details: bool = False):
    """Sparse precision matrix from the l1-penalised D-trace loss.

    Proximal gradient with gradient ``(Theta S + S Theta) / 2 - I`` and
    soft-thresholding of the off-diagonal entries only, started at
    ``diag(1 / S_kk)``. A pilot with eigenvalues below ``1e-8`` is first
    projected onto matrices with spectrum at least ``1e-8`` so the loss is
    convex. Stops when ``||Theta_new - Theta||_F <= tol * max(1, ||Theta||_F)``.

    Raises
    ------
    ConvergenceError
        After ``cfg.max_iter`` iterations, with the KKT residual attached.
    """
    Sigma, lmax = _psd_guard(check_symmetric(pilot))
    d = Sigma.shape[0]
    step = 1.0 / lmax if cfg.step is None else cfg.step
    if step * lmax >= 2.0:
        raise ConfigurationError(f"step {step:.3g} is at least 2 / lambda_max = {2 / lmax:.3g}")
    eye = np.eye(d)
    Theta = np.diag(1.0 / np.diag(Sigma))
    Z, t_mom = Theta, 1.0
    history = [dtrace_objective(Theta, Sigma, cfg.lam)] if return_details else []
    for it in range(1, cfg.max_iter + 1):
        base = Z if cfg.accelerate else Theta
        grad = 0.5 * (base @ Sigma + Sigma @ base) - eye
        new = symmetrize(_soft_offdiag(base - step * grad, step * cfg.lam))
        change = np.linalg.norm(new - Theta)
        if cfg.accelerate:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom**2))
            Z = new + ((t_mom - 1.0) / t_next) * (new - Theta)
            t_mom = t_next
        Theta = new
        if return_details:
            history.append(dtrace_objective(Theta, Sigma, cfg.lam))
        if change <= cfg.tol * max(1.0, np.linalg.norm(Theta)):
            if return_details:
                return DtraceResult(Theta, it, dtrace_kkt_residual(Theta, Sigma, cfg.lam), history)
            return Theta
    kkt = dtrace_kkt_residual(Theta, Sigma, cfg.lam)
    raise ConvergenceError(f"D-trace solver hit {cfg.max_iter} iterations; KKT residual {kkt:.3e}", residual=kkt)
