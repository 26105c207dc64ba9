"""
Tests for the matrix/randomness substrate.
"""

import warnings

import numpy as np
import pytest
from sklearn.exceptions import ConvergenceWarning

from ucae.errors import DimensionError, NumericError
from ucae.linalg import Rng, as_matrix, gauss_sample, matmul, spectral_norm


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_matmul_identity_and_scalar():
    a = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(matmul(np.eye(3), a), a)
    assert matmul(np.array([[2.0]]), np.array([[3.0]]))[0, 0] == 6.0


def test_matmul_matches_triple_loop(rng):
    a, b = rng.split("a").normal(3, 4), rng.split("b").normal(4, 2)
    assert np.max(np.abs(matmul(a, b) - triple_loop(a, b))) < 1e-12


def test_matmul_associativity(rng):
    for t in range(20):
        r = rng.split(f"triple-{t}")
        a, b, c = r.split("a").normal(4, 5), r.split("b").normal(5, 3), r.split("c").normal(3, 6)
        left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
        assert np.linalg.norm(left - right) <= 1e-9 * np.linalg.norm(left)


def test_matmul_rejects_bad_shapes_and_nonfinite():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(NumericError):
        matmul(np.array([[1e200]]), np.array([[1e200]]))


def test_as_matrix_promotes_rows():
    assert as_matrix([1.0, 2.0]).shape == (1, 2)
    with pytest.raises(NumericError):
        as_matrix([[np.nan]])


def test_gauss_sample_moments():
    x = gauss_sample(Rng(5), 100000, 1)
    assert abs(x.mean()) < 0.02
    assert abs(x.var() - 1.0) < 0.03


def test_gauss_sample_determinism_and_shape():
    assert np.array_equal(gauss_sample(Rng(3), 4, 2), gauss_sample(Rng(3), 4, 2))
    assert gauss_sample(Rng(3), 1, 3).shape == (1, 3)
    with pytest.raises(DimensionError):
        gauss_sample(Rng(3), 0, 3)


def test_split_does_not_advance_parent():
    parent = Rng(11)
    parent.split("child").normal(10, 10)
    assert np.array_equal(parent.normal(2, 2), Rng(11).normal(2, 2))


def test_split_tags_give_distinct_streams():
    parent = Rng(11)
    assert np.array_equal(parent.split("x").normal(3, 3), parent.split("x").normal(3, 3))
    assert not np.array_equal(parent.split("x").normal(3, 3), parent.split("y").normal(3, 3))


def test_spectral_norm_simple_cases():
    assert spectral_norm(2.0 * np.eye(4)) == pytest.approx(2.0, abs=1e-12)
    assert spectral_norm(np.diag([1.0, 3.0])) == pytest.approx(3.0, abs=1e-12)
    assert spectral_norm(np.zeros((2, 3))) == 0.0


def test_spectral_norm_matches_svd(rng):
    a = rng.normal(5, 7)
    expected = np.linalg.svd(a, compute_uv=False)[0]
    assert abs(spectral_norm(a) - expected) <= 1e-8 * expected


def test_spectral_norm_start_in_null_space():
    # ones is orthogonal to this matrix's only row direction
    a = np.array([[1.0, -1.0]])
    assert spectral_norm(a) == pytest.approx(np.sqrt(2.0), rel=1e-10)


def test_spectral_norm_warns_when_not_converged(rng):
    a = rng.normal(6, 6)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        estimate = spectral_norm(a, iters=1, tol=0.0)
    assert any(issubclass(w.category, ConvergenceWarning) for w in caught)
    assert 0.0 < estimate <= np.linalg.svd(a, compute_uv=False)[0] + 1e-12
