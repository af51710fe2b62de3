# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Semantics mirror ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, INFINITY

cnp.import_array()


def bilinear_sample(field, pts):
    cdef cnp.ndarray[cnp.float64_t, ndim=3] f
    arr = np.asarray(field, dtype=np.float64)
    squeeze = arr.ndim == 2
    f = np.ascontiguousarray(arr[:, :, None] if squeeze else arr)
    cdef const double[:, ::1] p = np.ascontiguousarray(np.asarray(pts, dtype=np.float64).reshape(-1, 2))
    cdef Py_ssize_t h = f.shape[0], w = f.shape[1], c = f.shape[2]
    cdef Py_ssize_t n = p.shape[0], i, k, x0, y0, x1, y1
    cdef double x, y, fx, fy
    out = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        x = p[i, 0]
        y = p[i, 1]
        if x < 0:
            x = 0
        elif x > w - 1:
            x = w - 1
        if y < 0:
            y = 0
        elif y > h - 1:
            y = h - 1
        x0 = <Py_ssize_t>floor(x)
        y0 = <Py_ssize_t>floor(y)
        if x0 > w - 2:
            x0 = w - 2 if w >= 2 else 0
        if y0 > h - 2:
            y0 = h - 2 if h >= 2 else 0
        x1 = x0 + 1 if x0 + 1 < w else w - 1
        y1 = y0 + 1 if y0 + 1 < h else h - 1
        fx = x - x0
        fy = y - y0
        for k in range(c):
            o[i, k] = ((f[y0, x0, k] * (1 - fx) + f[y0, x1, k] * fx) * (1 - fy)
                       + (f[y1, x0, k] * (1 - fx) + f[y1, x1, k] * fx) * fy)
    return out[:, 0] if squeeze else out


def pairwise_hi(a, b):
    cdef const double[:, ::1] A = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:, ::1] B = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = A.shape[0], m = B.shape[0], v = A.shape[1], i, j, k
    cdef double s, x, y
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(v):
                x = A[i, k]
                y = B[j, k]
                s += x if x < y else y
            o[i, j] = s
    return out


def diag_window_sums(d, Py_ssize_t T):
    cdef const double[:, ::1] D = np.ascontiguousarray(d, dtype=np.float64)
    cdef Py_ssize_t n = D.shape[0], m = D.shape[1], i, j, t
    if n < T or m < T:
        return np.zeros((max(n - T + 1, 0), max(m - T + 1, 0)))
    out = np.zeros((n - T + 1, m - T + 1), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double s
    for i in range(n - T + 1):
        for j in range(m - T + 1):
            s = 0.0
            for t in range(T):
                s += D[i + t, j + t]
            o[i, j] = s
    return out


def complete_linkage(d):
    cdef double[:, ::1] dist = np.array(d, dtype=np.float64, copy=True, order="C")
    cdef Py_ssize_t n = dist.shape[0], s, i, j, a = 0, b = 0, k
    merges = np.zeros((max(n - 1, 0), 4), dtype=np.float64)
    if n < 2:
        return merges
    cdef double[:, ::1] mg = merges
    cdef unsigned char[::1] active = np.ones(n, dtype=np.uint8)
    cdef double[::1] ids = np.arange(n, dtype=np.float64)
    cdef double[::1] sizes = np.ones(n, dtype=np.float64)
    cdef double best, v
    for s in range(n - 1):
        best = INFINITY
        for i in range(n):
            if not active[i]:
                continue
            for j in range(i + 1, n):
                if active[j]:
                    v = dist[i, j]
                    if v < best:
                        best = v
                        a = i
                        b = j
        mg[s, 0] = ids[a] if ids[a] < ids[b] else ids[b]
        mg[s, 1] = ids[b] if ids[a] < ids[b] else ids[a]
        mg[s, 2] = best
        mg[s, 3] = sizes[a] + sizes[b]
        for k in range(n):
            v = dist[a, k] if dist[a, k] > dist[b, k] else dist[b, k]
            dist[a, k] = v
            dist[k, a] = v
        active[b] = 0
        sizes[a] += sizes[b]
        ids[a] = n + s
    return merges
