import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from follmerlab.errors import DomainError, UnsupportedConfigurationError
from follmerlab.linalg import (
    as_matrix,
    check_spd,
    commutator_norm,
    op_norm,
    psd_sqrt,
    shared_eigenbasis,
)


def _spd(seed, d):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((d, d))
    return g @ g.T + d * np.eye(d)


def test_as_matrix_forms():
    assert np.array_equal(as_matrix(2.0, 3), 2.0 * np.eye(3))
    assert np.array_equal(as_matrix([1.0, 2.0]), np.diag([1.0, 2.0]))
    dense = [[2.0, 0.5], [0.5, 1.0]]
    assert np.array_equal(as_matrix(dense), np.array(dense))


def test_as_matrix_rejects_bad_shapes():
    with pytest.raises(DomainError):
        as_matrix(1.0)
    with pytest.raises(DomainError):
        as_matrix(np.ones((2, 3)))


def test_check_spd_rejects_asymmetric_and_indefinite():
    with pytest.raises(DomainError, match="symmetric"):
        check_spd(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(DomainError, match="positive definite"):
        check_spd(np.diag([1.0, -1.0]))
    with pytest.raises(DomainError, match="non-finite"):
        check_spd(np.array([[np.nan]]))
    assert np.array_equal(check_spd(np.diag([0.0, 1.0]), allow_singular=True), np.diag([0.0, 1.0]))


def test_op_norm_of_diagonal_is_largest_entry():
    assert op_norm(np.diag([3.0, -5.0, 1.0])) == pytest.approx(5.0)


def test_shared_eigenbasis_rejects_non_commuting_pair():
    a = np.array([[2.0, 1.0], [1.0, 2.0]])
    with pytest.raises(UnsupportedConfigurationError, match="commute"):
        shared_eigenbasis(a, np.diag([1.0, 3.0]))


def test_shared_eigenbasis_with_repeated_eigenvalues():
    a = np.diag([1.0, 1.0, 2.0])
    c = np.diag([3.0, 4.0, 4.0])
    q, ae, ce = shared_eigenbasis(a, c)
    assert np.allclose(q @ np.diag(ae) @ q.T, a)
    assert np.allclose(q @ np.diag(ce) @ q.T, c)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_psd_sqrt_squares_back(seed, d):
    m = _spd(seed, d)
    r = psd_sqrt(m)
    assert np.allclose(r, r.T)
    assert np.allclose(r @ r, m, rtol=1e-10, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_functions_of_one_matrix_commute(seed, d):
    m = _spd(seed, d)
    assert commutator_norm(m, m @ m + 2.0 * m) < 1e-12
    q, ae, ce = shared_eigenbasis(m, np.linalg.inv(m))
    assert np.allclose(ae * ce, 1.0)
