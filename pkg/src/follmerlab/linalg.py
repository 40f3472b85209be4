"""Small dense linear-algebra helpers for symmetric matrices."""

import numpy as np

from .errors import DomainError, UnsupportedConfigurationError

COMMUTE_RTOL = 1e-10


def as_matrix(value, dim=None, name="matrix"):
    """Coerce a scalar, vector or square array into a symmetric matrix.

    A scalar becomes ``value * I``, a vector becomes ``diag(value)``.

    Args:
        value: Scalar, 1-D array of diagonal entries, or 2-D square array.
        dim: Required when ``value`` is a scalar.
        name: Used in error messages.

    Returns:
        A float64 array of shape (d, d).
    """
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        if dim is None:
            raise DomainError(f"{name}: dimension required for a scalar")
        return float(arr) * np.eye(dim)
    if arr.ndim == 1:
        return np.diag(arr)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DomainError(f"{name}: expected a square matrix, got shape {arr.shape}")
    return arr.copy()


def check_spd(mat, name="matrix", allow_singular=False):
    """Validate symmetry and (semi)definiteness; return the symmetrized matrix."""
    mat = np.asarray(mat, dtype=float)
    if not np.all(np.isfinite(mat)):
        raise DomainError(f"{name} has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(mat))))
    if np.max(np.abs(mat - mat.T)) > 1e-10 * scale:
        raise DomainError(f"{name} is not symmetric")
    sym = 0.5 * (mat + mat.T)
    eig = np.linalg.eigvalsh(sym)
    if allow_singular:
        if eig[0] < -1e-10 * scale:
            raise DomainError(f"{name} is not positive semi-definite (min eigenvalue {eig[0]:.3e})")
    elif eig[0] <= 0.0:
        raise DomainError(f"{name} is not positive definite (min eigenvalue {eig[0]:.3e})")
    return sym


def op_norm(mat):
    """Spectral norm of a matrix (or of each matrix in a stack)."""
    return np.linalg.norm(mat, ord=2, axis=(-2, -1))


def psd_sqrt(mat):
    """Symmetric square root of a positive semi-definite matrix."""
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def commutator_norm(a, c):
    """Frobenius norm of AC - CA relative to ||A||_F ||C||_F."""
    comm = a @ c - c @ a
    denom = np.linalg.norm(a) * np.linalg.norm(c)
    return float(np.linalg.norm(comm) / denom) if denom > 0 else 0.0


def shared_eigenbasis(a, c, rtol=COMMUTE_RTOL):
    """Simultaneously diagonalize two commuting symmetric matrices.

    Args:
        a: Symmetric d x d matrix.
        c: Symmetric d x d matrix commuting with ``a``.
        rtol: Relative Frobenius tolerance on the commutator.

    Returns:
        Tuple ``(q, a_eig, c_eig)`` with ``a = q diag(a_eig) q.T`` and likewise for ``c``.

    Raises:
        UnsupportedConfigurationError: If the matrices do not commute.
    """
    rel = commutator_norm(a, c)
    if rel > rtol:
        raise UnsupportedConfigurationError(
            f"A and C do not commute (relative commutator {rel:.3e} > {rtol:.0e})"
        )
    # A generic combination separates every joint eigenspace of a commuting pair.
    golden = 0.5 * (1.0 + np.sqrt(5.0))
    _, q = np.linalg.eigh(a + golden * c)
    a_eig = np.einsum("ij,ik,kj->j", q, a, q)
    c_eig = np.einsum("ij,ik,kj->j", q, c, q)
    return q, a_eig, c_eig
