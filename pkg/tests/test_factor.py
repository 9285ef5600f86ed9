import numpy as np
import pytest
from scipy.stats import norm as gauss

from tailrobust.exceptions import ConfigurationError
from tailrobust.factor import (
    EPS_FLOOR,
    estimate_fdp,
    factor_count_ratio,
    fdp_from_parts,
    poet_threshold,
    robust_mean,
    robust_poet,
)
from tailrobust.linalg import sample_covariance
from tailrobust.simulation import factor_model_sample


def test_poet_reconstruction_identity(rng):
    X, _, _ = factor_model_sample(200, 30, 2, rng)
    S = sample_covariance(X)
    fit = robust_poet(S, 2, 0.0)
    np.testing.assert_allclose(fit.sigma_total, S, atol=1e-12)
    thr = robust_poet(S, 2, 0.3)
    np.testing.assert_allclose(np.diag(thr.sigma_eps), np.diag(fit.sigma_eps))
    np.testing.assert_allclose(thr.sigma_total, thr.low_rank + thr.sigma_eps, atol=1e-13)


def test_poet_soft_threshold_rule(rng):
    S = sample_covariance(rng.standard_normal((100, 5)))
    lam = 0.2
    fit = robust_poet(S, 1, lam)
    R = S - fit.low_rank
    dg = np.diag(R)
    expect = np.sign(R) * np.maximum(np.abs(R) - lam * np.sqrt(np.outer(dg, dg)), 0)
    np.fill_diagonal(expect, dg)
    np.testing.assert_allclose(fit.sigma_eps, expect, atol=1e-13)


def test_poet_floors_negative_residual_variances():
    # indefinite pilot (eigenvalues 3 and -1): residual diagonal is -0.5
    S = np.array([[1.0, 2.0], [2.0, 1.0]])
    fit = robust_poet(S, 1, 0.1)
    assert np.all(np.diag(fit.sigma_eps) >= EPS_FLOOR)
    np.testing.assert_array_equal(fit.floored, [0, 1])


def test_poet_bad_rank():
    with pytest.raises(ConfigurationError):
        robust_poet(np.eye(3), 3, 0.1)


def test_threshold_formula():
    assert poet_threshold(300, 100, 2.0) == pytest.approx(2 * (np.sqrt(np.log(100) / 300) + 0.1))


def test_fdp_zero_over_zero():
    fdp, R = fdp_from_parts([50.0], np.array([0.1, -0.3]), np.zeros(2), np.ones(2))
    assert R[0] == 0 and fdp[0] == 0.0


def test_fdp_hand_computation():
    stats = np.array([3.0, -2.5, 0.2])
    shift = np.array([0.5, -0.2, 0.0])
    sd = np.array([1.0, 2.0, 0.5])
    fdp, R = fdp_from_parts([2.0], stats, shift, sd)
    num = sum(gauss.cdf((-2 + s) / v) + gauss.cdf((-2 - s) / v) for s, v in zip(shift, sd))
    assert R[0] == 2
    assert fdp[0] == pytest.approx(num / 2)


def test_robust_mean_limits(rng):
    x = rng.standard_t(3, 50)
    assert robust_mean(x, np.inf) == x.mean()
    assert robust_mean(x, 1e8) == pytest.approx(x.mean(), rel=1e-12)


def test_factor_count_on_spiked_spectrum():
    lam = np.array([50.0, 40.0, 2.0, 1.5, 1.0, 1.0])
    assert factor_count_ratio(np.diag(lam)) == 2


def test_estimate_fdp_shapes_and_monotone_R(rng):
    X, _, _ = factor_model_sample(80, 40, 2, rng, mu=np.r_[np.ones(4), np.zeros(36)])
    curve = estimate_fdp(X, 2, [0.5, 1.0, 2.0, 3.0], pilot="adaptive_truncated")
    assert curve.fdp_hat.shape == (4,) and np.all((0 <= curve.fdp_hat) & (curve.fdp_hat <= 1))
    assert np.all(np.diff(curve.R) <= 0)
    text = curve.to_csv()
    assert text.splitlines()[0] == "z,R,fdp_hat" and len(text.splitlines()) == 5


def test_estimate_fdp_validates_grid(rng):
    X = rng.standard_normal((30, 6))
    with pytest.raises(ConfigurationError):
        estimate_fdp(X, 1, [2.0, 1.0], pilot=sample_covariance(X))
    with pytest.raises(ConfigurationError):
        estimate_fdp(X, 1, [1.0], pilot="kendall")
