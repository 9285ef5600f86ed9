"""Tail-robust covariance estimation for heavy-tailed data.

The functional API lives in the submodules; the most common entry points
are re-exported here together with the scikit-learn style estimators.
"""

import warnings

# numba falls back to another threading layer when the system TBB is too
# old and says so on first use; the fallback is harmless for our kernels.
warnings.filterwarnings("ignore", message="The TBB threading layer", module="numba")

__version__ = "0.1.0"

from .estimators import (  # noqa: E402
    AdaptiveHuberCovariance,
    ElementwiseHuberCovariance,
    ElementwiseTruncatedCovariance,
    MedianOfMeansCovariance,
    SampleCovariance,
    SpectralHuberCovariance,
    SpectrumTruncatedCovariance,
)
from .exceptions import ConfigurationError, ConvergenceError, NoSolutionError, TailRobustError  # noqa: E402
from .factor import estimate_fdp, robust_poet  # noqa: E402
from .linalg import norm, sample_covariance  # noqa: E402
from .m_estimators import elementwise_huber, mom_covariance, spectral_huber  # noqa: E402
from .structured import (  # noqa: E402
    BandableConfig,
    DtraceConfig,
    bandable_covariance,
    dtrace_precision,
    lowrank_covariance,
)
from .truncation import elementwise_truncated, spectrum_truncated  # noqa: E402
from .tuning import (  # noqa: E402
    adaptive_elementwise_truncated,
    adaptive_huber_covariance,
    cross_validate_tau,
    solve_spectral_tau,
)

__all__ = [
    "AdaptiveHuberCovariance",
    "BandableConfig",
    "ConfigurationError",
    "ConvergenceError",
    "DtraceConfig",
    "ElementwiseHuberCovariance",
    "ElementwiseTruncatedCovariance",
    "MedianOfMeansCovariance",
    "NoSolutionError",
    "SampleCovariance",
    "SpectralHuberCovariance",
    "SpectrumTruncatedCovariance",
    "TailRobustError",
    "adaptive_elementwise_truncated",
    "adaptive_huber_covariance",
    "bandable_covariance",
    "cross_validate_tau",
    "dtrace_precision",
    "elementwise_huber",
    "elementwise_truncated",
    "estimate_fdp",
    "lowrank_covariance",
    "mom_covariance",
    "norm",
    "robust_poet",
    "sample_covariance",
    "spectral_huber",
    "spectrum_truncated",
    "solve_spectral_tau",
]
