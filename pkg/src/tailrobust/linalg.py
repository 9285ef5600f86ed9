"""Dense symmetric-matrix helpers used by every estimator.

Covariance estimates are plain ``numpy`` arrays that are kept exactly
symmetric: every constructor here goes through :func:`symmetrize`.
"""

from __future__ import annotations

from typing import Callable, Iterator, NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import ConvergenceError

__all__ = [
    "EigenSystem",
    "PairStream",
    "check_data",
    "check_symmetric",
    "eig_sym",
    "matrix_fn",
    "norm",
    "pair_count",
    "sample_covariance",
    "symmetrize",
]

_NORM_ALIASES = {
    "max": "max",
    "spectral": "spectral",
    "2": "spectral",
    "frobenius": "frobenius",
    "fro": "frobenius",
    "f": "frobenius",
    "one_one": "one_one",
    "1": "one_one",
}


def check_data(X: ArrayLike, min_samples: int = 2) -> NDArray[np.float64]:
    """Validate an ``(n_samples, n_features)`` data matrix.

    One-dimensional input is treated as a single feature.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D data matrix, got shape {X.shape}")
    n, d = X.shape
    if n < min_samples:
        raise ValueError(f"need at least {min_samples} observations, got {n}")
    if d < 1:
        raise ValueError("need at least one variable")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contains NaN or infinite entries")
    return X


def symmetrize(M: ArrayLike) -> NDArray[np.float64]:
    """Return ``(M + M.T) / 2``, which is symmetric bit for bit."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    return 0.5 * (M + M.T)


def check_symmetric(M: ArrayLike, atol: float = 1e-10) -> NDArray[np.float64]:
    """Validate a symmetric finite matrix and return its symmetrized copy."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix contains NaN or infinite entries")
    scale = 1.0 + np.max(np.abs(M), initial=0.0)
    if np.max(np.abs(M - M.T), initial=0.0) > atol * scale:
        raise ValueError("matrix is not symmetric")
    return symmetrize(M)


def pair_count(n: int) -> int:
    """Number of unordered pairs ``n (n - 1) / 2``."""
    return n * (n - 1) // 2


class PairStream:
    """Lazy stream of pairwise differences ``X[i] - X[j]`` for ``i < j``.

    Pairs come in the order (0, 1), (0, 2), ..., (n-2, n-1). The full
    ``N x d`` difference matrix is never built; :meth:`chunks` yields
    bounded blocks for vectorised consumers.
    """

    def __init__(self, X: ArrayLike):
        self.X = check_data(X)

    def __len__(self) -> int:
        return pair_count(self.X.shape[0])

    def __iter__(self) -> Iterator[NDArray[np.float64]]:
        X = self.X
        for i in range(X.shape[0] - 1):
            for j in range(i + 1, X.shape[0]):
                yield X[i] - X[j]

    def chunks(self, max_pairs: int = 4096) -> Iterator[NDArray[np.float64]]:
        """Yield ``(m, d)`` blocks of consecutive differences, ``m <= max_pairs``."""
        if max_pairs < 1:
            raise ValueError("max_pairs must be positive")
        X = self.X
        n = X.shape[0]
        buf = []
        size = 0
        for i in range(n - 1):
            start = i + 1
            while start < n:
                stop = min(n, start + max_pairs - size)
                buf.append(X[i] - X[start:stop])
                size += stop - start
                start = stop
                if size == max_pairs:
                    yield np.concatenate(buf)
                    buf, size = [], 0
        if buf:
            yield np.concatenate(buf)


class EigenSystem(NamedTuple):
    """Eigenvalues in non-increasing order with orthonormal eigenvector columns."""

    lambdas: NDArray[np.float64]
    vectors: NDArray[np.float64]

    def reconstruct(self) -> NDArray[np.float64]:
        return symmetrize((self.vectors * self.lambdas) @ self.vectors.T)


def eig_sym(M: ArrayLike) -> EigenSystem:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Vectors of a degenerate eigenspace are an arbitrary orthonormal basis,
    so compare projectors rather than individual columns.
    """
    M = symmetrize(M)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix contains NaN or infinite entries")
    try:
        w, V = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:
        resid = float(np.linalg.norm(M - np.diag(np.diag(M))))
        raise ConvergenceError(
            f"symmetric eigensolver failed to converge: {exc}", residual=resid
        ) from exc
    return EigenSystem(w[::-1].copy(), V[:, ::-1].copy())


def matrix_fn(M: ArrayLike, f: Callable[[NDArray[np.float64]], ArrayLike]) -> NDArray[np.float64]:
    """Apply a scalar function to the spectrum: ``V f(diag(lambda)) V^T``.

    ``f`` is called once on the eigenvalue vector and must act elementwise.
    """
    lam, V = eig_sym(M)
    flam = np.asarray(f(lam), dtype=np.float64)
    if flam.shape != lam.shape:
        raise ValueError("f must map the eigenvalue vector elementwise")
    return symmetrize((V * flam) @ V.T)


def norm(M: ArrayLike, kind: str = "spectral") -> float:
    """Matrix norm of a symmetric matrix.

    ``kind`` is one of ``max``, ``spectral`` (alias ``2``), ``frobenius``
    (aliases ``fro``, ``F``) or ``one_one`` (maximum absolute column sum).
    """
    key = _NORM_ALIASES.get(str(kind).lower())
    if key is None:
        raise ValueError(f"unknown norm {kind!r}; choose from max, spectral, frobenius, one_one")
    A = np.asarray(M, dtype=np.float64)
    if A.size == 0:
        return 0.0
    if key == "max":
        return float(np.max(np.abs(A)))
    if key == "frobenius":
        return float(np.sqrt(np.sum(A * A)))
    if key == "one_one":
        return float(np.max(np.sum(np.abs(A), axis=0)))
    return float(np.max(np.abs(np.linalg.eigvalsh(symmetrize(A)))))


def sample_covariance(X: ArrayLike) -> NDArray[np.float64]:
    """Unbiased sample covariance ``1/(n-1) sum (x_i - xbar)(x_i - xbar)^T``.

    This is exactly the pairwise U-statistic ``(1/N) sum_{i<j} Y Y^T / 2``
    with ``Y = x_i - x_j``, which every truncated estimator reduces to when
    no truncation takes place.
    """
    X = check_data(X)
    Xc = X - X.mean(axis=0)
    return symmetrize(Xc.T @ Xc / (X.shape[0] - 1))
