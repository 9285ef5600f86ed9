import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tailrobust.linalg import (
    PairStream,
    check_data,
    eig_sym,
    matrix_fn,
    norm,
    pair_count,
    sample_covariance,
    symmetrize,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_sample_covariance_matches_numpy(rng):
    X = rng.standard_normal((30, 4))
    np.testing.assert_allclose(sample_covariance(X), np.cov(X, rowvar=False), rtol=1e-13)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(1, 5)), elements=finite))
def test_u_statistic_form_equals_centered_form(X):
    S = sample_covariance(X)
    U = np.zeros_like(S)
    for y in PairStream(X):
        U += np.outer(y, y) / 2
    U /= pair_count(X.shape[0])
    assert np.max(np.abs(S - U)) <= 1e-10 * (1 + np.max(np.abs(S)))


def test_pair_stream_length():
    X = np.arange(14.0).reshape(7, 2)
    assert len(PairStream(X)) == 21 == sum(1 for _ in PairStream(X))


def test_eig_sym_descending_and_reconstructs(rng):
    A = symmetrize(rng.standard_normal((6, 6)))
    lam, V = eig_sym(A)
    assert np.all(np.diff(lam) <= 0)
    np.testing.assert_allclose((V * lam) @ V.T, A, atol=1e-12)


def test_matrix_fn_square_root(rng):
    A = rng.standard_normal((5, 5))
    P = A @ A.T + np.eye(5)
    R = matrix_fn(P, np.sqrt)
    np.testing.assert_allclose(R @ R, P, atol=1e-10)


def test_norms_on_hand_example():
    M = np.array([[2.0, -1.0], [-1.0, 2.0]])
    assert norm(M, "max") == 2.0
    assert norm(M, "spectral") == pytest.approx(3.0)
    assert norm(M, "frobenius") == pytest.approx(np.sqrt(10.0))
    assert norm(M, "one_one") == 3.0


@pytest.mark.parametrize("bad", [np.ones((2, 2, 2)), np.ones((1, 3)), np.array([[1.0, np.nan], [0.0, 1.0]])])
def test_check_data_rejects(bad):
    with pytest.raises(ValueError):
        check_data(bad)


def test_one_dimensional_input_is_one_feature():
    assert check_data([0.0, 2.0]).shape == (2, 1)
