# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled kernels for clustering and weight interpolation.

Signatures and results match ``kfmem._kernels_py`` exactly.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def link_sorted(values, long long d):
    cdef cnp.int64_t[::1] v = np.ascontiguousarray(values, dtype=np.int64)
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t i
    cdef list starts = []
    if n == 0:
        return starts
    starts.append(0)
    for i in range(1, n):
        if v[i] - v[i - 1] > d:
            starts.append(i)
    return starts


def lower_medians(values, starts):
    cdef cnp.int64_t[::1] v = np.ascontiguousarray(values, dtype=np.int64)
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t m = len(starts)
    cdef Py_ssize_t j, s, e
    cdef list out = []
    for j in range(m):
        s = starts[j]
        e = starts[j + 1] if j + 1 < m else n
        out.append(int(v[s + (e - s - 1) // 2]))
    return out


def lerp_f32(pre, ft, double alpha):
    cdef cnp.float32_t[::1] a = np.ascontiguousarray(pre, dtype=np.float32)
    cdef cnp.float32_t[::1] b = np.ascontiguousarray(ft, dtype=np.float32)
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t i
    out = np.empty(n, dtype=np.float32)
    cdef cnp.float32_t[::1] o = out
    cdef double w = 1.0 - alpha
    with nogil:
        for i in range(n):
            o[i] = <cnp.float32_t>(w * <double>a[i] + alpha * <double>b[i])
    return out
