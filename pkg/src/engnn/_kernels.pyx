# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: CSR row sums and simple-walk enumeration."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def csr_rowsum(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
               const double[:, ::1] x):
    cdef Py_ssize_t rows = indptr.shape[0] - 1
    cdef Py_ssize_t f = x.shape[1]
    out_arr = np.zeros((rows, f), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, c, j
    with nogil:
        for i in range(rows):
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                for c in range(f):
                    out[i, c] += x[j, c]
    return out_arr


cdef void _walk(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
                cnp.int64_t[::1] path, cnp.uint8_t[::1] on_path,
                Py_ssize_t depth, Py_ssize_t k, bint closed,
                cnp.int64_t start, cnp.int64_t[::1] counts) noexcept nogil:
    cdef cnp.int64_t u = path[depth - 1]
    cdef cnp.int64_t v
    cdef Py_ssize_t e, t
    if depth == k:
        if closed:
            for e in range(indptr[u], indptr[u + 1]):
                if indices[e] == start:
                    for t in range(k):
                        counts[path[t]] += 1
                    break
        else:
            for t in range(k):
                counts[path[t]] += 1
        return
    for e in range(indptr[u], indptr[u + 1]):
        v = indices[e]
        if on_path[v]:
            continue
        if closed and v < start:
            continue
        path[depth] = v
        on_path[v] = 1
        _walk(indptr, indices, path, on_path, depth + 1, k, closed, start, counts)
        on_path[v] = 0


def walk_counts(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
                Py_ssize_t k, bint closed):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    counts_arr = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] counts = counts_arr
    path_arr = np.zeros(k, dtype=np.int64)
    cdef cnp.int64_t[::1] path = path_arr
    on_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] on_path = on_arr
    cdef Py_ssize_t s
    with nogil:
        for s in range(n):
            path[0] = s
            on_path[s] = 1
            _walk(indptr, indices, path, on_path, 1, k, closed, s, counts)
            on_path[s] = 0
    # every walk is found once per traversal direction
    return counts_arr // 2
