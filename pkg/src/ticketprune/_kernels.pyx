# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Mirrors ``_kernels_py`` exactly in arithmetic order."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, INFINITY

cnp.import_array()


def select_candidate(const double[::1] w, const double[::1] u, double target,
                     double eps, double sign):
    cdef Py_ssize_t k = w.shape[0]
    cdef Py_ssize_t j, best_j = -1
    cdef double best = INFINITY
    cdef double shifted = sign * target
    cdef double score
    if u.shape[0] != k:
        raise ValueError("w and u must have the same length")
    for j in range(k):
        if fabs(w[j] - shifted) <= eps and fabs(u[j] - sign) <= eps:
            score = fabs(u[j] * w[j] - target)
            if score < best:
                best = score
                best_j = j
    return best_j


def coo_matmul(const cnp.int64_t[::1] rows, const cnp.int64_t[::1] cols,
               const double[::1] vals, const double[:, ::1] x_t, Py_ssize_t n_rows):
    cdef Py_ssize_t nnz = vals.shape[0]
    cdef Py_ssize_t n_pts = x_t.shape[1]
    cdef Py_ssize_t e, p, r, c
    cdef double v
    out = np.zeros((n_rows, n_pts), dtype=np.float64)
    cdef double[:, ::1] o = out
    for e in range(nnz):
        r = rows[e]
        c = cols[e]
        v = vals[e]
        for p in range(n_pts):
            o[r, p] += v * x_t[c, p]
    return out


cdef double _sup_error(const cnp.int64_t[:, ::1] shapes, const double[::1] flat_w,
                       unsigned long long code, const double[:, ::1] points,
                       const double[:, ::1] targets, double[::1] buf_a,
                       double[::1] buf_b, double cutoff) nogil:
    cdef Py_ssize_t n_layers = shapes.shape[0]
    cdef Py_ssize_t n_pts = points.shape[0]
    cdef Py_ssize_t d = points.shape[1]
    cdef Py_ssize_t p, li, o, i, n_out, n_in, offset
    cdef double acc, diff, err, sq
    cdef double worst = 0.0
    cdef double* src
    cdef double* dst
    cdef double* tmp
    for p in range(n_pts):
        src = &buf_a[0]
        dst = &buf_b[0]
        for i in range(d):
            src[i] = points[p, i]
        offset = 0
        for li in range(n_layers):
            n_out = shapes[li, 0]
            n_in = shapes[li, 1]
            for o in range(n_out):
                acc = 0.0
                for i in range(n_in):
                    if (code >> (offset + o * n_in + i)) & 1ULL:
                        acc = acc + flat_w[offset + o * n_in + i] * src[i]
                if li < n_layers - 1 and acc < 0.0:
                    acc = 0.0
                dst[o] = acc
            offset = offset + n_out * n_in
            tmp = src
            src = dst
            dst = tmp
        n_out = shapes[n_layers - 1, 0]
        if n_out == 1:
            err = fabs(src[0] - targets[p, 0])
        else:
            sq = 0.0
            for o in range(n_out):
                diff = src[o] - targets[p, o]
                sq = sq + diff * diff
            err = sqrt(sq)
        if err > worst:
            worst = err
            if worst >= cutoff:
                return worst
    return worst


def masked_sup_error(const cnp.int64_t[:, ::1] shapes, const double[::1] flat_w,
                     unsigned long long code, const double[:, ::1] points,
                     const double[:, ::1] targets):
    cdef Py_ssize_t width = max(int(np.max(shapes)), points.shape[1])
    cdef double[::1] buf_a = np.zeros(width)
    cdef double[::1] buf_b = np.zeros(width)
    return _sup_error(shapes, flat_w, code, points, targets, buf_a, buf_b, INFINITY)


def brute_force_sup(const cnp.int64_t[:, ::1] shapes, const double[::1] flat_w,
                    const double[:, ::1] points, const double[:, ::1] targets):
    cdef Py_ssize_t n_bits = flat_w.shape[0]
    cdef unsigned long long n_codes = 1ULL << n_bits
    cdef unsigned long long code, best_code = 0
    cdef double best = INFINITY
    cdef double err
    cdef Py_ssize_t width = max(int(np.max(shapes)), points.shape[1])
    cdef double[::1] buf_a = np.zeros(width)
    cdef double[::1] buf_b = np.zeros(width)
    with nogil:
        for code in range(n_codes):
            err = _sup_error(shapes, flat_w, code, points, targets, buf_a, buf_b, best)
            if err < best:
                best = err
                best_code = code
    return int(best_code), float(best)
