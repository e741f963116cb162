"""Dense f64 linear algebra kernels used everywhere else.

All arrays are C-contiguous float64. Convolution, ranking, and the
orthogonal re-initialization path are built on the four functions here,
so they favor numerical headroom over speed: Householder reflections for
QR, explicit residual checks for null-space membership.
"""

import numpy as np

from .errors import DimensionError


def as_tensor(x) -> np.ndarray:
    """Coerce to a contiguous float64 ndarray."""
    return np.ascontiguousarray(x, dtype=np.float64)


def matmul(a, b) -> np.ndarray:
    """Matrix product of two rank-2 tensors with shape checking."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(
            f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def qr_decompose(a):
    """Full Householder QR: a = q @ r with q [m,m] orthogonal, r [m,n] upper.

    Rank deficiency is legal; exhausted columns simply leave zero entries
    on the diagonal of r. Reflections are applied in column order with no
    pivoting, which is stable enough for the near-parallel filter banks
    this package produces.
    """
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"qr_decompose needs a matrix, got {a.shape}")
    m, n = a.shape
    r = a.copy()
    q = np.eye(m)
    for j in range(min(m, n)):
        x = r[j:, j]
        norm_x = np.sqrt(x @ x)
        if norm_x == 0.0:
            continue
        v = x.copy()
        v[0] += np.copysign(norm_x, x[0])
        v /= np.sqrt(v @ v)
        # H = I - 2 v v^T applied to the trailing block of r and to q.
        r[j:, j:] -= 2.0 * np.outer(v, v @ r[j:, j:])
        q[:, j:] -= 2.0 * np.outer(q[:, j:] @ v, v)
    return q, np.triu(r)


def null_space_basis(a, tol=None) -> np.ndarray:
    """Orthonormal basis [n, d] of the null space of a [m, n].

    Columns come from the full QR of a^T and are kept only if they pass a
    direct membership test max|a @ v| <= tol, so the returned basis always
    satisfies the advertised residual bound regardless of conditioning.
    d may be 0 (shape [n, 0]): no orthogonal direction exists.

    tol defaults to 1e-10 times the largest column norm of a.
    """
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"null_space_basis needs a matrix, got {a.shape}")
    n = a.shape[1]
    if tol is None:
        col_norms = np.sqrt((a * a).sum(axis=0))
        tol = 1e-10 * (col_norms.max() if n else 0.0)
    q, _ = qr_decompose(a.T)
    resid = np.abs(a @ q).max(axis=0) if a.size else np.zeros(n)
    keep = resid <= tol
    return np.ascontiguousarray(q[:, keep])


def rowspace_residual(a, v, tol=None) -> np.ndarray:
    """Component of v orthogonal to the row space of a [m, n].

    Orthonormalizes the rows by modified Gram-Schmidt with a second
    cleanup pass, then subtracts the projection of v. Returns the zero
    vector when the rows span the whole space. Used as the fallback when
    a layer's constraint matrix has no null space left.
    """
    a = as_tensor(a)
    v = as_tensor(v).copy()
    if tol is None:
        row_norms = np.sqrt((a * a).sum(axis=1))
        tol = 1e-10 * (row_norms.max() if a.shape[0] else 0.0)
    basis = []
    for row in a:
        u = row.copy()
        for _ in range(2):
            for b in basis:
                u -= (b @ u) * b
        norm_u = np.sqrt(u @ u)
        if norm_u > tol:
            basis.append(u / norm_u)
    for _ in range(2):
        for b in basis:
            v -= (b @ v) * b
    return v


def row_normalize(a):
    """Scale each row to unit L2 norm.

    Returns (normalized, zero_rows) where zero_rows flags all-zero rows,
    which are passed through unchanged rather than faulted: callers rank
    dead filters, they do not crash on them.
    """
    a = as_tensor(a)
    norms = np.sqrt((a * a).sum(axis=1))
    zero_rows = norms == 0.0
    out = a / np.where(zero_rows, 1.0, norms)[:, None]
    return out, zero_rows
