"""Data-driven choice of robustification parameters.

Three calibration rules are provided:

* the truncated second-moment equation, solved per entry
  (:func:`solve_truncation_tau`, :func:`adaptive_elementwise_truncated`);
* the coupled location/scale system behind the adaptive Huber estimator
  (:func:`solve_huber_system`, :func:`adaptive_huber_covariance`);
* the spectral analogue for the spectrum-wise estimator
  (:func:`solve_spectral_tau`).

:func:`cross_validate_tau` selects a scalar level by K-fold validation
when none of the equations applies.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import _kernels
from .exceptions import ConfigurationError, NoSolutionError
from .linalg import check_data
from .truncation import _pair_halfnorms, _spectral_weights, pair_laplacian_covariance

logger = logging.getLogger(__name__)

__all__ = [
    "AdaptiveHuberConfig",
    "CvGrid",
    "TuneResult",
    "TuningDiagnostics",
    "adaptive_elementwise_truncated",
    "adaptive_huber_covariance",
    "cross_validate_tau",
    "default_tau_grid",
    "solve_huber_system",
    "solve_spectral_tau",
    "solve_truncation_tau",
]

_FALLBACK_NAMES = {0: None, 1: "adaptive_truncated", 2: "sample_covariance"}


@dataclass
class TuneResult:
    """Outcome of one calibration solve."""

    tau: float
    theta: float = float("nan")
    iterations: int = 0
    converged: bool = True


@dataclass
class TuningDiagnostics:
    """Per-entry record of how each robustification level was obtained.

    Only entries that needed attention are listed in ``entries``; ``counts``
    summarises the whole upper triangle.
    """

    method: str
    entries: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


@dataclass(frozen=True)
class AdaptiveHuberConfig:
    """Controls for the alternating (theta, tau) solve.

    ``eps`` is relative to the mean absolute pair product of the entry, so
    the stopping rule is invariant to rescaling the data.
    """

    eps: float = 1e-10
    max_iter: int = 100
    huber_tol: float = 1e-12
    huber_max_iter: int = 200

    def __post_init__(self):
        if self.max_iter < 1 or self.huber_max_iter < 1:
            raise ConfigurationError("iteration caps must be at least 1")
        if not (self.eps > 0 and self.huber_tol > 0):
            raise ConfigurationError("tolerances must be positive")


def _confidence(n: int, t: float | None) -> float:
    t = np.log(n) if t is None else float(t)
    if not t > 0:
        raise ConfigurationError("confidence parameter t must be positive")
    return t


def truncation_rhs(d: int, t: float, m: int) -> float:
    """Right-hand side ``(2 log d + t) / m`` of the truncated-moment equation."""
    return (2.0 * np.log(d) + t) / m


def solve_truncation_tau(z: ArrayLike, d: int, t: float, m: int) -> TuneResult:
    """Solve ``(1/N) sum min(z_i^2, tau^2) / tau^2 = (2 log d + t) / m`` for ``tau``.

    The left side decreases from the fraction of non-zero ``z_i`` to 0, so
    a root exists and is unique exactly when that fraction exceeds the
    right-hand side.

    Raises
    ------
    NoSolutionError
        When the right-hand side is not below the non-zero fraction;
        ``deficit`` is the gap.
    """
    z = np.ascontiguousarray(z, dtype=np.float64).ravel()
    if z.size == 0:
        raise ValueError("z must be non-empty")
    rhs = truncation_rhs(d, t, m)
    u, it = _kernels.solve_truncation(z, float(z @ z), rhs * z.size, np.nan)
    if np.isnan(u):
        frac = np.count_nonzero(z) / z.size
        raise NoSolutionError(
            f"truncation equation has no root: rhs {rhs:.4g} >= non-zero fraction {frac:.4g}",
            deficit=rhs - frac,
        )
    return TuneResult(tau=float(np.sqrt(u)), iterations=int(it))


def truncation_lhs(z: ArrayLike, tau: float) -> float:
    """Empirical truncated second moment ``(1/N) sum min(z^2, tau^2) / tau^2``."""
    z = np.asarray(z, dtype=np.float64)
    return float(np.mean(np.minimum(z * z, tau * tau)) / (tau * tau))


def _diagnostics(method, status, iters=None, fallback=None, taus=None) -> TuningDiagnostics:
    d = status.shape[0]
    iu = np.triu_indices(d)
    diag = TuningDiagnostics(method=method)
    flagged = np.argwhere((status != 0) | (fallback != 0 if fallback is not None else False))
    for k, l in flagged:
        if k > l:
            continue
        entry = {"index": [int(k), int(l)], "converged": bool(status[k, l] == _kernels.OK)}
        if iters is not None:
            entry["iterations"] = int(iters[k, l])
        if fallback is not None:
            entry["fallback"] = _FALLBACK_NAMES[int(fallback[k, l])]
        elif status[k, l] == _kernels.NO_SOLUTION:
            entry["fallback"] = "no_truncation"
        if taus is not None:
            entry["tau"] = float(taus[k, l])
        diag.entries.append(entry)
    diag.counts = {
        "entries": int(iu[0].size),
        "no_solution": int(np.sum(status[iu] == _kernels.NO_SOLUTION)),
        "not_converged": int(np.sum(status[iu] == _kernels.NOT_CONVERGED)),
    }
    if fallback is not None:
        diag.counts["fallback_truncated"] = int(np.sum(fallback[iu] == 1))
        diag.counts["fallback_sample"] = int(np.sum(fallback[iu] == 2))
    if iters is not None:
        diag.counts["max_iterations"] = int(iters[iu].max(initial=0))
    if diag.entries:
        logger.info("%s: %d entries needed a fallback or did not converge", method, len(diag.entries))
    return diag


def adaptive_elementwise_truncated(X: ArrayLike, t: float | None = None, *, return_details: bool = False):
    """Element-wise truncated estimator with per-entry data-driven levels.

    Each ``tau_kl`` solves the truncated-moment equation on
    ``Z = Y_k Y_l / 2`` with ``m = n // 2``; ``t`` defaults to ``log n``.
    Entries without a root are left untruncated and reported in the
    diagnostics.

    Returns
    -------
    estimate : ndarray of shape (d, d)
    taus, diagnostics : only when ``return_details`` is true.
    """
    X = check_data(X)
    n, d = X.shape
    t = _confidence(n, t)
    Xt = np.ascontiguousarray((X - X.mean(axis=0)).T)
    est, taus, status = _kernels.adaptive_truncated(Xt, truncation_rhs(d, t, n // 2))
    if return_details:
        return est, taus, _diagnostics("adaptive_truncated", status, taus=taus)
    return est


def _huber_f1(z, theta, tau, d, t, n):
    r = np.asarray(z) - theta
    return float(np.mean(np.minimum(r * r, tau * tau)) / (tau * tau) - (2 * np.log(d) + t) / n)


def _huber_f2(z, theta, tau):
    return float(_kernels.huber_score(np.ascontiguousarray(z, dtype=np.float64), theta, tau))


def solve_huber_system(
    z: ArrayLike, d: int, t: float, n: int, cfg: AdaptiveHuberConfig | None = None
) -> TuneResult:
    """Jointly solve for the Huber location ``theta`` and its level ``tau``.

    Alternates between the truncated-moment equation in ``tau`` (residuals
    ``z - theta``, right-hand side ``(2 log d + t) / n``) and the Huber
    score equation in ``theta``, starting from the mean of ``z``.

    Raises
    ------
    NoSolutionError
        If the moment equation loses its root along the way, e.g. for
        constant ``z``.
    """
    cfg = cfg or AdaptiveHuberConfig()
    z = np.ascontiguousarray(z, dtype=np.float64).ravel()
    if z.size == 0:
        raise ValueError("z must be non-empty")
    rhs = (2.0 * np.log(d) + t) / n
    theta, tau, it, status = _kernels.huber_system(
        z, rhs, cfg.eps, cfg.max_iter, cfg.huber_tol, cfg.huber_max_iter
    )
    if status == _kernels.NO_SOLUTION:
        frac = np.count_nonzero(z - theta) / z.size
        raise NoSolutionError(
            f"moment equation has no root at theta={theta:.6g}: rhs {rhs:.4g} >= {frac:.4g}",
            deficit=rhs - frac,
        )
    return TuneResult(tau=float(tau), theta=float(theta), iterations=int(it), converged=status == _kernels.OK)


def adaptive_huber_covariance(
    X: ArrayLike,
    t: float | None = None,
    cfg: AdaptiveHuberConfig | None = None,
    *,
    return_details: bool = False,
):
    """Data-adaptive Huber covariance estimator.

    Every upper-triangle entry runs :func:`solve_huber_system` on its pair
    products and the result is mirrored. Entries whose system has no
    solution fall back to the adaptive truncated estimate, and to the plain
    pairwise mean if that fails too; both cases are recorded in the
    diagnostics.
    """
    cfg = cfg or AdaptiveHuberConfig()
    X = check_data(X)
    n, d = X.shape
    t = _confidence(n, t)
    Xt = np.ascontiguousarray((X - X.mean(axis=0)).T)
    est, taus, iters, status, fallback = _kernels.adaptive_huber(
        Xt,
        (2.0 * np.log(d) + t) / n,
        truncation_rhs(d, t, n // 2),
        cfg.eps,
        cfg.max_iter,
        cfg.huber_tol,
        cfg.huber_max_iter,
    )
    if return_details:
        diag = _diagnostics("adaptive_huber", status, iters=iters, fallback=fallback, taus=taus)
        return est, taus, diag
    return est


def spectral_lhs(a: NDArray[np.float64], X: NDArray[np.float64], tau: float) -> float:
    """``|| (1/(tau^2 N)) sum min(a_i, tau)^2 Y_i Y_i^T / ||Y_i||^2 ||_2`` with ``a = ||Y||^2 / 2``."""
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(a > 0, np.minimum(a, tau) ** 2 / (2.0 * a), 0.0)
    M = pair_laplacian_covariance(X, w)
    return float(np.linalg.eigvalsh(M)[-1]) / tau**2


def solve_spectral_tau(X: ArrayLike, t: float | None = None, *, max_iter: int = 50, rtol: float = 1e-4) -> TuneResult:
    """Fixed-point solve of the spectral truncated-moment equation.

    Iterates ``tau^2 <- (m / (log 2d + t)) * lambda_max(S(tau))`` with
    ``S(tau) = (1/N) sum min(a_i, tau)^2 Y_i Y_i^T / ||Y_i||^2``.

    The left side of the equation is bounded by
    ``lambda_max((1/N) sum Y Y^T / ||Y||^2)``, which is about
    ``1 / effective rank``; when the right-hand side exceeds it there is no
    root and :class:`NoSolutionError` is raised. This is the usual case in
    high dimensions with few samples.
    """
    X = check_data(X)
    n, d = X.shape
    t = _confidence(n, t)
    rhs = (np.log(2 * d) + t) / (n // 2)
    Xc = X - X.mean(axis=0)
    a = _pair_halfnorms(Xc)
    if not np.any(a > 0):
        raise NoSolutionError("all observations coincide")
    a_min = a[a > 0].min()
    sup = spectral_lhs(a, Xc, a_min)
    if not sup > rhs:
        raise NoSolutionError(
            f"spectral equation has no root: rhs {rhs:.4g} >= attainable {sup:.4g}", deficit=rhs - sup
        )

    # tau^2 <- lambda_max(S(tau)) / rhs, started above every pair so the
    # first map uses the untruncated moment.
    tau = float(a.max())
    best = (np.inf, tau)
    for it in range(1, max_iter + 1):
        lhs = spectral_lhs(a, Xc, tau)
        resid = abs(lhs - rhs)
        if resid < best[0]:
            best = (resid, tau)
        tau_new = float(np.sqrt(lhs / rhs) * tau)
        if it > 1 and abs(tau_new - tau) < rtol * tau:
            return TuneResult(tau=tau_new, iterations=it, converged=True)
        tau = tau_new
    logger.warning("spectral tau iteration did not settle after %d steps", max_iter)
    return TuneResult(tau=best[1], iterations=max_iter, converged=False)


@dataclass(frozen=True)
class CvGrid:
    """Candidate levels (strictly increasing) and the number of folds."""

    candidates: tuple
    folds: int = 5

    def __post_init__(self):
        c = np.asarray(self.candidates, dtype=np.float64)
        if c.size == 0:
            raise ConfigurationError("empty tau grid")
        if np.any(~(c > 0)) or np.any(np.diff(c) <= 0):
            raise ConfigurationError("grid candidates must be positive and strictly increasing")
        if self.folds < 2:
            raise ConfigurationError("need at least 2 folds")
        object.__setattr__(self, "candidates", tuple(float(v) for v in c))


_CV_ESTIMATORS = ("spectral_truncated", "elementwise_huber", "elementwise_huber_scalar")


def default_tau_grid(X: ArrayLike, estimator: str, t: float | None = None, size: int = 20) -> NDArray[np.float64]:
    """Log-spaced levels spanning ``[0.1, 10]`` times a plug-in theoretical scale."""
    X = check_data(X)
    n, d = X.shape
    t = _confidence(n, t)
    m = n // 2
    a = _pair_halfnorms(X)
    if estimator == "spectral_truncated":
        # v^2 = || (1/N) sum (Y Y^T / 2)^2 ||_2 = || (1/N) sum a_i Y Y^T / 2 ||_2
        M = pair_laplacian_covariance(X, a)
        v = np.sqrt(max(np.linalg.eigvalsh(M)[-1], 0.0))
        scale = v * np.sqrt(m / (np.log(2 * d) + t))
    elif estimator.startswith("elementwise_huber"):
        # mean over entries of E Z_kl^2, since sum_kl Z_kl^2 = a^2
        v = np.sqrt(np.mean(a * a) / d**2)
        scale = v * np.sqrt(m / (2 * np.log(d) + t))
    else:
        raise ConfigurationError(f"unknown estimator {estimator!r}; choose from {_CV_ESTIMATORS}")
    if not scale > 0:
        raise ConfigurationError("degenerate data: theoretical scale is zero")
    return scale * np.logspace(-1, 1, size)


def _fold_estimates(X_train, estimator, taus):
    """Estimates on one training fold for every level in ``taus`` (ascending)."""
    if estimator == "spectral_truncated":
        Xc = X_train - X_train.mean(axis=0)
        a = _pair_halfnorms(Xc)
        return [pair_laplacian_covariance(Xc, _spectral_weights(a, tau)) for tau in taus]
    Xt = np.ascontiguousarray((X_train - X_train.mean(axis=0)).T)
    path = _kernels.elementwise_huber_path(Xt, np.ascontiguousarray(taus[::-1]), 1e-12, 200)
    return list(path[::-1])


def cross_validate_tau(
    X: ArrayLike,
    estimator: str = "spectral_truncated",
    grid: CvGrid | ArrayLike | None = None,
    seed=None,
    *,
    return_scores: bool = False,
):
    """Pick a scalar robustification level by K-fold cross-validation.

    The loss is the Frobenius distance between the estimate on the training
    folds and the sample covariance of the held-out fold, averaged over
    folds. Ties go to the smallest level.

    Parameters
    ----------
    estimator : {"spectral_truncated", "elementwise_huber"}
    grid : CvGrid or array-like, optional
        Candidate levels; defaults to :func:`default_tau_grid` with 5 folds.
    seed : int or numpy Generator, optional
        Drives the fold assignment.
    """
    if estimator not in _CV_ESTIMATORS:
        raise ConfigurationError(f"unknown estimator {estimator!r}; choose from {_CV_ESTIMATORS}")
    X = check_data(X)
    n = X.shape[0]
    if grid is None:
        grid = CvGrid(tuple(default_tau_grid(X, estimator)))
    elif not isinstance(grid, CvGrid):
        grid = CvGrid(tuple(np.atleast_1d(np.asarray(grid, dtype=np.float64))))
    if grid.folds > n // 2:
        raise ConfigurationError(f"{grid.folds} folds need at least {2 * grid.folds} observations")
    taus = np.asarray(grid.candidates)
    if taus.size == 1:
        return (taus[0], np.zeros(1)) if return_scores else float(taus[0])
    rng = np.random.default_rng(seed)
    folds = np.array_split(rng.permutation(n), grid.folds)
    scores = np.zeros(taus.size)
    for held in folds:
        mask = np.ones(n, dtype=bool)
        mask[held] = False
        Xv = X[held]
        Xvc = Xv - Xv.mean(axis=0)
        target = Xvc.T @ Xvc / (Xv.shape[0] - 1)
        for i, est in enumerate(_fold_estimates(X[mask], estimator, taus)):
            scores[i] += np.linalg.norm(est - target)
    scores /= grid.folds
    best = int(np.argmin(scores))
    return (float(taus[best]), scores) if return_scores else float(taus[best])
