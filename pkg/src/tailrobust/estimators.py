"""scikit-learn style wrappers around the functional estimators.

Each class follows the ``sklearn.covariance`` conventions: ``fit(X)``
stores ``covariance_``, ``location_`` and (optionally) ``precision_``, and
inherits ``score``, ``mahalanobis`` and ``error_norm`` from
:class:`sklearn.covariance.EmpiricalCovariance`. None of the estimators
needs the location, so ``location_`` is the plain column mean and is only
kept for API compatibility.

>>> import numpy as np
>>> from tailrobust.estimators import AdaptiveHuberCovariance
>>> X = np.random.default_rng(0).standard_t(3, size=(60, 4))
>>> est = AdaptiveHuberCovariance().fit(X)
>>> est.covariance_.shape
(4, 4)
"""

from __future__ import annotations

from sklearn.covariance import EmpiricalCovariance
from sklearn.utils.validation import validate_data

from .linalg import check_data, sample_covariance
from .m_estimators import elementwise_huber, mom_covariance, spectral_huber
from .truncation import elementwise_truncated, spectrum_truncated
from .tuning import (
    AdaptiveHuberConfig,
    CvGrid,
    adaptive_elementwise_truncated,
    adaptive_huber_covariance,
    cross_validate_tau,
    default_tau_grid,
    solve_spectral_tau,
)

__all__ = [
    "AdaptiveHuberCovariance",
    "ElementwiseHuberCovariance",
    "ElementwiseTruncatedCovariance",
    "MedianOfMeansCovariance",
    "SampleCovariance",
    "SpectralHuberCovariance",
    "SpectrumTruncatedCovariance",
]


class _PairwiseCovariance(EmpiricalCovariance):
    """Shared fit plumbing; subclasses implement ``_estimate(X)``."""

    def __init__(self, *, store_precision=True):
        self.store_precision = store_precision
        self.assume_centered = False

    def _estimate(self, X):
        raise NotImplementedError

    def fit(self, X, y=None):
        X = validate_data(self, X, ensure_min_samples=2)
        X = check_data(X)
        self.location_ = X.mean(axis=0)
        self._set_covariance(self._estimate(X))
        return self


class SampleCovariance(_PairwiseCovariance):
    """Unbiased sample covariance (denominator ``n - 1``)."""

    def _estimate(self, X):
        return sample_covariance(X)


class ElementwiseTruncatedCovariance(_PairwiseCovariance):
    """Entrywise truncated pairwise estimator.

    Parameters
    ----------
    tau : "adaptive", float or (d, d) array
        ``"adaptive"`` solves the truncated-moment equation per entry.
    t : float, optional
        Confidence parameter of the adaptive rule (default ``log n``).
    """

    def __init__(self, tau="adaptive", t=None, *, store_precision=True):
        super().__init__(store_precision=store_precision)
        self.tau = tau
        self.t = t

    def _estimate(self, X):
        if isinstance(self.tau, str):
            if self.tau != "adaptive":
                raise ValueError(f"tau must be 'adaptive' or numeric, got {self.tau!r}")
            est, self.tau_, self.diagnostics_ = adaptive_elementwise_truncated(X, self.t, return_details=True)
            return est
        self.tau_ = self.tau
        return elementwise_truncated(X, self.tau)


class SpectrumTruncatedCovariance(_PairwiseCovariance):
    """Spectrum-wise truncated pairwise estimator.

    ``tau`` is a number, ``"cv"`` (K-fold selection over the default grid)
    or ``"adaptive"`` (spectral tuning equation, which has no root when the
    dimension is large relative to ``n``).
    """

    def __init__(self, tau="cv", t=None, cv=5, random_state=None, *, store_precision=True):
        super().__init__(store_precision=store_precision)
        self.tau = tau
        self.t = t
        self.cv = cv
        self.random_state = random_state

    def _estimate(self, X):
        self.tau_ = _resolve_scalar_tau(self, X, "spectral_truncated")
        return spectrum_truncated(X, self.tau_)


class ElementwiseHuberCovariance(_PairwiseCovariance):
    """Entrywise Huber M-estimator with one scalar level, by default chosen by CV."""

    def __init__(self, tau="cv", cv=5, random_state=None, *, store_precision=True):
        super().__init__(store_precision=store_precision)
        self.tau = tau
        self.cv = cv
        self.random_state = random_state

    def _estimate(self, X):
        self.tau_ = _resolve_scalar_tau(self, X, "elementwise_huber")
        return elementwise_huber(X, self.tau_)


class AdaptiveHuberCovariance(_PairwiseCovariance):
    """Entrywise Huber estimator with jointly solved levels, with fallbacks logged in ``diagnostics_``."""

    def __init__(self, t=None, max_iter=100, *, store_precision=True):
        super().__init__(store_precision=store_precision)
        self.t = t
        self.max_iter = max_iter

    def _estimate(self, X):
        cfg = AdaptiveHuberConfig(max_iter=self.max_iter)
        est, self.tau_, self.diagnostics_ = adaptive_huber_covariance(X, self.t, cfg, return_details=True)
        return est


class SpectralHuberCovariance(_PairwiseCovariance):
    """Spectral Huber M-estimator; one eigendecomposition per pair and iteration."""

    def __init__(self, tau=1.0, max_pairs=None, random_state=None, *, store_precision=True):
        super().__init__(store_precision=store_precision)
        self.tau = tau
        self.max_pairs = max_pairs
        self.random_state = random_state

    def _estimate(self, X):
        self.tau_ = float(self.tau)
        return spectral_huber(X, self.tau_, subsample=self.max_pairs, random_state=self.random_state)


class MedianOfMeansCovariance(_PairwiseCovariance):
    """Entrywise median of block sample covariances."""

    def __init__(self, n_groups=None, *, store_precision=True):
        super().__init__(store_precision=store_precision)
        self.n_groups = n_groups

    def _estimate(self, X):
        return mom_covariance(X, self.n_groups)


def _resolve_scalar_tau(est, X, kind):
    tau = est.tau
    if isinstance(tau, str):
        if tau == "cv":
            grid = CvGrid(tuple(default_tau_grid(X, kind)), folds=est.cv)
            return cross_validate_tau(X, kind, grid, seed=est.random_state)
        if tau == "adaptive" and kind == "spectral_truncated":
            return solve_spectral_tau(X, est.t).tau
        raise ValueError(f"unsupported tau option {tau!r}")
    tau = float(tau)
    if not tau > 0:
        raise ValueError("tau must be positive")
    return tau
