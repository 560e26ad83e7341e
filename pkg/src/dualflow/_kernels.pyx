# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled pointwise kernels: batched Cholesky solves with a zone test."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, NAN

cnp.import_array()


cdef int _cholesky(double* A, double* L, int n, double shift) noexcept nogil:
    """Lower Cholesky factor of A - shift*I into L; 0 on failure."""
    cdef int i, j, k
    cdef double s
    for i in range(n):
        for j in range(i + 1):
            s = A[i * n + j]
            if i == j:
                s -= shift
            for k in range(j):
                s -= L[i * n + k] * L[j * n + k]
            if i == j:
                if s <= 0.0:
                    return 0
                L[i * n + i] = sqrt(s)
            else:
                L[i * n + j] = s / L[j * n + j]
    return 1


def spd_solve(M, rhs, double shift):
    """Batched solve of ``M x = rhs`` for symmetric ``M`` of shape ``(K, n, n)``.

    Returns ``(x, status)``: status 2 when ``M - shift*I`` is positive
    definite, 1 when only ``M`` is, 0 otherwise (row of ``x`` is NaN).
    """
    cdef double[:, :, ::1] Mv = np.ascontiguousarray(M, dtype=np.float64)
    cdef double[:, ::1] bv = np.ascontiguousarray(rhs, dtype=np.float64)
    cdef Py_ssize_t K = bv.shape[0]
    cdef int n = <int> bv.shape[1]
    x = np.empty((K, n), dtype=np.float64)
    status = np.zeros(K, dtype=np.uint8)
    cdef double[:, ::1] xv = x
    cdef unsigned char[::1] sv = status
    cdef double[:, ::1] L = np.zeros((n, n), dtype=np.float64)
    cdef double[::1] y = np.zeros(n, dtype=np.float64)
    cdef Py_ssize_t kk
    cdef int i, j, ok
    cdef double s
    with nogil:
        for kk in range(K):
            ok = _cholesky(&Mv[kk, 0, 0], &L[0, 0], n, shift)
            if ok:
                sv[kk] = 2
            else:
                sv[kk] = 0
            # the solve itself always uses the unshifted matrix
            if shift != 0.0 or not ok:
                ok = _cholesky(&Mv[kk, 0, 0], &L[0, 0], n, 0.0)
                if ok and sv[kk] == 0:
                    sv[kk] = 1
            if not ok:
                for i in range(n):
                    xv[kk, i] = NAN
                continue
            for i in range(n):
                s = bv[kk, i]
                for j in range(i):
                    s -= L[i, j] * y[j]
                y[i] = s / L[i, i]
            for i in range(n - 1, -1, -1):
                s = y[i]
                for j in range(i + 1, n):
                    s -= L[j, i] * xv[kk, j]
                xv[kk, i] = s / L[i, i]
    return x, status


def min_eigenvalues(M):
    M = np.ascontiguousarray(M, dtype=np.float64)
    if M.shape[0] == 0:
        return np.zeros(0)
    return np.linalg.eigvalsh(M)[:, 0]
