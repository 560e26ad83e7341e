"""Pure-numpy implementation of the pointwise kernels.

Mirrors ``_kernels.pyx`` exactly in contract; used when the compiled
extension is unavailable or ``DUALFLOW_PURE_PYTHON=1``.
"""
import numpy as np


def spd_solve(M, rhs, shift):
    """Batched solve of ``M x = rhs`` for symmetric ``M`` of shape ``(K, n, n)``.

    Returns ``(x, status)`` where ``status[k]`` is 2 when ``M[k] - shift*I``
    is positive definite, 1 when only ``M[k]`` is, and 0 otherwise. Rows of
    ``x`` with status 0 are NaN.
    """
    M = np.ascontiguousarray(M, dtype=np.float64)
    rhs = np.ascontiguousarray(rhs, dtype=np.float64)
    K, n = rhs.shape
    lam = np.linalg.eigvalsh(M)[:, 0] if K else np.zeros(0)
    status = np.zeros(K, dtype=np.uint8)
    status[lam > 0.0] = 1
    status[lam > shift] = 2
    x = np.full((K, n), np.nan)
    ok = status > 0
    if np.any(ok):
        x[ok] = np.linalg.solve(M[ok], rhs[ok][..., None])[..., 0]
    return x, status


def min_eigenvalues(M):
    M = np.ascontiguousarray(M, dtype=np.float64)
    if M.shape[0] == 0:
        return np.zeros(0)
    return np.linalg.eigvalsh(M)[:, 0]
