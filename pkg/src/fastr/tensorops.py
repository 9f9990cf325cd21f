"""Dense matrix primitives: row-wise Kronecker product, row-wise dot,
and small symmetric factorizations used by the basis machinery.

All functions are pure and operate on float64 row-major arrays; matrices
at this layer are small (basis and penalty matrices, minibatch blocks).
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NotPositiveDefiniteError

_SYM_TOL = 1e-8


def row_kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise Kronecker product of two matrices with equal row counts.

    Row ``n`` of the result is ``kron(a[n], b[n])``, so the output has
    shape ``(N, p * q)`` with ``out[n, j*q + k] = a[n, j] * b[n, k]``.
    This is the classical design-matrix construction for interaction
    smooths; it is only ever built on small blocks or inside tests.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("row_kron expects 2-d arrays")
    if a.shape[0] != b.shape[0]:
        raise DimensionError(
            f"row count mismatch: {a.shape[0]} vs {b.shape[0]}"
        )
    n, p = a.shape
    q = b.shape[1]
    return (a[:, :, None] * b[:, None, :]).reshape(n, p * q)


def row_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hadamard product followed by row sums: ``out[n] = sum_j a[n,j] b[n,j]``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return np.einsum("nj,nj->n", a, b)


def _check_symmetric(s: np.ndarray, what: str) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionError(f"{what} expects a square matrix, got {s.shape}")
    scale = max(1.0, float(np.abs(s).max(initial=0.0)))
    if float(np.abs(s - s.T).max(initial=0.0)) > _SYM_TOL * scale:
        raise DimensionError(f"{what} expects a symmetric matrix")
    return s


def cholesky(s: np.ndarray) -> np.ndarray:
    """Upper-triangular Cholesky factor ``R`` with ``R.T @ R == s``.

    Raises ``NotPositiveDefiniteError`` when a pivot is not positive.
    """
    s = _check_symmetric(s, "cholesky")
    try:
        lower = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    return lower.T.copy()


def sym_eigen(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Returns ``(values, vectors)`` with orthonormal columns in ``vectors``
    satisfying ``s @ vectors[:, j] == values[j] * vectors[:, j]``.
    """
    s = _check_symmetric(s, "sym_eigen")
    values, vectors = np.linalg.eigh(s)
    order = np.argsort(values)[::-1]
    return values[order], vectors[:, order]
