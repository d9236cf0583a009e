# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled DTW kernel. Must stay numerically identical to _dtw_py."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def dtw_path(cost):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0]
    cdef Py_ssize_t m = c.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] acc = np.empty((n, m), dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double best

    acc[0, 0] = c[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + c[0, j]
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + c[i, 0]
        for j in range(1, m):
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = c[i, j] + best

    cdef cnp.ndarray[cnp.int64_t, ndim=2] path = np.empty((n + m - 1, 2), dtype=np.int64)
    cdef Py_ssize_t k = n + m - 2
    cdef Py_ssize_t bi, bj
    i = n - 1
    j = m - 1
    path[k, 0] = i
    path[k, 1] = j
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            best = acc[i - 1, j - 1]
            bi = i - 1
            bj = j - 1
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
                bi = i - 1
                bj = j
            if acc[i, j - 1] < best:
                bi = i
                bj = j - 1
            i = bi
            j = bj
        k -= 1
        path[k, 0] = i
        path[k, 1] = j
    return np.ascontiguousarray(path[k:]), float(acc[n - 1, m - 1])
