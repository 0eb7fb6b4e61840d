"""Dense linear-algebra helpers shared by the kernel builders.

Matrices are plain ``float64`` numpy arrays. The Kronecker product and
vectorization follow a column-grouped convention: ``vec`` stacks columns,
and ``kron(a, b)`` places ``a[i1, j1] * b[i2, j2]`` at row
``i1 + i2 * a.shape[0]`` and column ``j1 + j2 * a.shape[1]`` (0-based).
Under this convention ``vec(a @ h @ b.T) == kron(a, b) @ vec(h)``.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg as sla


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a Cholesky factorization fails even after jitter."""


# refuse to materialize Kronecker products larger than this many entries
MAX_KRON_ENTRIES = 2**31


def as_matrix(x, name="matrix"):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def _check_finite(a, what):
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"{what} produced non-finite entries")
    return a


def matmul(a, b):
    """Standard product ``a @ b`` with an explicit shape check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return _check_finite(a @ b, "matmul")


def matvec(a, x):
    a = as_matrix(a, "a")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or a.shape[1] != x.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by vector {x.shape}")
    return _check_finite(a @ x, "matvec")


def kron(a, b):
    """Kronecker product in the column-grouped convention (see module doc).

    Equals ``numpy.kron(b, a)`` in numpy's row-grouped convention.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    rows = a.shape[0] * b.shape[0]
    cols = a.shape[1] * b.shape[1]
    if rows * cols > MAX_KRON_ENTRIES:
        raise MemoryError(
            f"Kronecker product of {a.shape} and {b.shape} would have "
            f"{rows * cols} entries"
        )
    return np.kron(b, a)


def vectorize(h):
    """Stack the columns of ``h`` into one vector: ``out[j1 + j2*d1] = h[j1, j2]``."""
    h = as_matrix(h, "h")
    return h.ravel(order="F").copy()


def devectorize(v, rows, cols):
    """Inverse of :func:`vectorize`."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size != rows * cols:
        raise ShapeError(f"vector of length {v.size} cannot fill {rows}x{cols}")
    return v.reshape((rows, cols), order="F").copy()


def vec_trick(a, h, b):
    """Return ``a @ h @ b.T``, the matrix whose ``vec`` is ``kron(a, b) @ vec(h)``.

    Two small products replace one multiply by the (much larger) Kronecker
    factor.
    """
    a = as_matrix(a, "a")
    h = as_matrix(h, "h")
    b = as_matrix(b, "b")
    if a.shape[1] != h.shape[0] or b.shape[1] != h.shape[1]:
        raise ShapeError(
            f"vec_trick needs a.cols == h.rows and b.cols == h.cols, "
            f"got a{a.shape}, h{h.shape}, b{b.shape}"
        )
    return _check_finite((a @ h) @ b.T, "vec_trick")



def default_jitter(k):
    k = as_matrix(k, "k")
    n = k.shape[0]
    return 1e-8 * float(np.trace(k)) / max(n, 1)


def symmetrize(k, tol=1e-8):
    """Return ``(k + k.T) / 2`` after checking the asymmetry is at most ``tol``.

    The tolerance is relative to ``max(1, max|k|)``.
    """
    k = as_matrix(k, "k")
    if k.shape[0] != k.shape[1]:
        raise ShapeError(f"expected a square matrix, got {k.shape}")
    scale = max(1.0, float(np.max(np.abs(k))) if k.size else 1.0)
    asym = float(np.max(np.abs(k - k.T))) if k.size else 0.0
    if asym > tol * scale:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    return 0.5 * (k + k.T)


def solve_spd_jitter(k, y, jitter=-1.0):
    """Solve ``(k + jitter*I) x = y`` by Cholesky after symmetrizing ``k``.

    A negative ``jitter`` selects ``1e-8 * trace(k) / n``.
    """
    k = symmetrize(k)
    y = np.asarray(y, dtype=np.float64)
    n = k.shape[0]
    if y.shape[0] != n:
        raise ShapeError(f"rhs of shape {y.shape} does not match {k.shape}")
    if jitter < 0:
        jitter = default_jitter(k)
    kj = k + jitter * np.eye(n)
    try:
        factor = sla.cho_factor(kj, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite with jitter={jitter:.3e}; "
            "try a larger jitter"
        ) from exc
    x = sla.cho_solve(factor, y)
    tol = 1e-8 * (1.0 + np.linalg.norm(y))
    resid = np.linalg.norm(kj @ x - y)
    # a couple of refinement sweeps rescue mildly ill-conditioned systems
    for _ in range(2):
        if resid <= tol:
            break
        x = x + sla.cho_solve(factor, y - kj @ x)
        resid = np.linalg.norm(kj @ x - y)
    if not np.isfinite(resid) or resid > tol:
        raise NotPositiveDefiniteError(
            f"solve residual {resid:.3e} too large with jitter={jitter:.3e}; "
            "try a larger jitter"
        )
    return x


def sym_eigvals_min(k):
    """Smallest eigenvalue of the symmetrized matrix."""
    k = symmetrize(k)
    if k.shape[0] == 0:
        raise ShapeError("empty matrix has no eigenvalues")
    vals = sla.eigvalsh(k, subset_by_index=[0, 0])
    return float(vals[0])


def spectral_norm(k):
    k = as_matrix(k, "k")
    if k.size == 0:
        return 0.0
    return float(np.linalg.norm(k, 2))
