import json

import numpy as np
import pytest

from _oracles import bisect_truncation_tau, golden_huber_location, pair_products
from tailrobust.exceptions import ConfigurationError, NoSolutionError
from tailrobust.m_estimators import elementwise_huber, huber_location
from tailrobust.truncation import elementwise_truncated, spectrum_truncated
from tailrobust.tuning import (
    CvGrid,
    adaptive_elementwise_truncated,
    adaptive_huber_covariance,
    cross_validate_tau,
    default_tau_grid,
    solve_huber_system,
    solve_spectral_tau,
    solve_truncation_tau,
    spectral_lhs,
    truncation_lhs,
    truncation_rhs,
)
from tailrobust.truncation import _pair_halfnorms


def test_truncation_tau_matches_bisection(rng):
    for _ in range(100):
        n = int(rng.integers(20, 200))
        z = rng.standard_t(2.5, n) * rng.uniform(0.01, 100)
        d, m = int(rng.integers(2, 50)), n // 2
        t = np.log(n)
        res = solve_truncation_tau(z, d, t, m)
        rhs = truncation_rhs(d, t, m)
        assert abs(truncation_lhs(z, res.tau) - rhs) <= 1e-8
        assert res.tau == pytest.approx(bisect_truncation_tau(z, rhs), rel=1e-9)


def test_truncation_tau_no_root():
    z = np.r_[np.zeros(95), np.ones(5)]
    with pytest.raises(NoSolutionError) as err:
        solve_truncation_tau(z, 10, 5.0, 50)
    assert err.value.deficit > 0


def test_huber_system_residuals_and_consistency(rng):
    for _ in range(50):
        n = int(rng.integers(30, 150))
        z = rng.standard_t(3, n) * rng.uniform(0.1, 10) + rng.normal()
        d, t = 10, np.log(n)
        res = solve_huber_system(z, d, t, n)
        rhs = (2 * np.log(d) + t) / n
        assert abs(truncation_lhs(z - res.theta, res.tau) - rhs) <= 1e-8
        score = np.mean(np.clip(z - res.theta, -res.tau, res.tau)) / res.tau
        assert abs(score) <= 1e-8
        # each half of the system checked by an unrelated solver
        assert res.theta == pytest.approx(golden_huber_location(z, res.tau), abs=1e-8 * res.tau)
        assert res.tau == pytest.approx(bisect_truncation_tau(z - res.theta, rhs), rel=1e-8)


def test_huber_system_constant_input_has_no_root():
    with pytest.raises(NoSolutionError):
        solve_huber_system(np.full(40, 3.0), 5, 3.0, 40)


def test_adaptive_truncated_uses_reported_levels(rng):
    X = rng.standard_t(3, (60, 5))
    est, taus, diag = adaptive_elementwise_truncated(X, return_details=True)
    np.testing.assert_allclose(est, elementwise_truncated(X, taus), rtol=1e-12)
    assert diag.counts["entries"] == 15


def test_adaptive_huber_uses_reported_levels(rng):
    X = rng.standard_t(3, (60, 4))
    est, taus, diag = adaptive_huber_covariance(X, return_details=True)
    for k in range(4):
        for l in range(k, 4):
            assert est[k, l] == pytest.approx(huber_location(pair_products(X - X.mean(0), k, l), taus[k, l]), abs=1e-9)
    json.loads(diag.to_json())


@pytest.mark.parametrize("c", [1e-3, 7.0, 1e4])
def test_adaptive_huber_scale_equivariance(rng, c):
    X = rng.standard_t(3, (50, 4))
    A = adaptive_huber_covariance(X)
    B = adaptive_huber_covariance(c * X)
    np.testing.assert_allclose(B, c * c * A, rtol=1e-8)


def test_adaptive_truncated_scale_equivariance(rng):
    X = rng.standard_t(3, (50, 4))
    np.testing.assert_allclose(adaptive_elementwise_truncated(3 * X), 9 * adaptive_elementwise_truncated(X), rtol=1e-10)


def test_spectral_tau_solves_equation(rng):
    X = rng.standard_t(5, (200, 3))
    n, d = X.shape
    t = np.log(n)
    res = solve_spectral_tau(X, t)
    rhs = (np.log(2 * d) + t) / (n // 2)
    lhs = spectral_lhs(_pair_halfnorms(X - X.mean(0)), X - X.mean(0), res.tau)
    assert abs(lhs - rhs) <= 1e-3 * rhs
    assert solve_spectral_tau(5 * X, t).tau == pytest.approx(25 * res.tau, rel=1e-3)


def test_spectral_tau_no_root_in_high_dimension(rng):
    X = rng.standard_normal((60, 7))
    with pytest.raises(NoSolutionError):
        solve_spectral_tau(X, np.log(60) + np.log(7))


def test_cv_returns_grid_member_and_is_deterministic(rng):
    X = rng.standard_t(3, (40, 6))
    grid = default_tau_grid(X, "spectral_truncated")
    tau, scores = cross_validate_tau(X, "spectral_truncated", seed=3, return_scores=True)
    assert tau in grid and scores.shape == grid.shape
    assert cross_validate_tau(X, "spectral_truncated", seed=3) == tau


def test_cv_scores_match_direct_computation(rng):
    X = rng.standard_t(3, (30, 3))
    taus = [0.5, 2.0]
    _, scores = cross_validate_tau(X, "elementwise_huber", CvGrid(tuple(taus), folds=3), seed=1, return_scores=True)
    folds = np.array_split(np.random.default_rng(1).permutation(30), 3)
    ref = np.zeros(2)
    for held in folds:
        keep = np.setdiff1d(np.arange(30), held)
        target = np.cov(X[held], rowvar=False)
        for i, tau in enumerate(taus):
            ref[i] += np.linalg.norm(elementwise_huber(X[keep], tau) - target)
    np.testing.assert_allclose(scores, ref / 3, rtol=1e-10)


def test_cv_ties_pick_smallest(rng):
    X = rng.standard_normal((20, 2))
    huge = (1e6, 1e7, 1e8)  # no clipping anywhere, all scores equal
    tau = cross_validate_tau(X, "spectral_truncated", CvGrid(huge, folds=2), seed=0)
    assert tau == 1e6
    np.testing.assert_array_equal(spectrum_truncated(X, tau), spectrum_truncated(X, 1e8))


def test_cv_grid_validation():
    with pytest.raises(ConfigurationError):
        CvGrid((2.0, 1.0))
    with pytest.raises(ConfigurationError):
        cross_validate_tau(np.ones((6, 2)) + np.arange(6)[:, None], "spectral_truncated", CvGrid((1.0, 2.0), folds=5))
