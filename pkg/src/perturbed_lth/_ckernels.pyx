# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Mirrors ``_pykernels`` operation for operation.

Every routine here must produce bit-identical floats to its pure-Python
twin, so no fast-math and no reassociation of sums.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def merge_sorted(const double[::1] lo, const double[::1] hi, double tol):
    """Merge intervals already sorted by ``lo``; returns new arrays."""
    cdef Py_ssize_t n = lo.shape[0]
    out_lo = np.empty(n, dtype=np.float64)
    out_hi = np.empty(n, dtype=np.float64)
    cdef double[::1] olo = out_lo
    cdef double[::1] ohi = out_hi
    cdef Py_ssize_t i, m = 0
    cdef double cur_lo, cur_hi
    if n == 0:
        return out_lo, out_hi
    cur_lo = lo[0]
    cur_hi = hi[0]
    for i in range(1, n):
        if lo[i] <= cur_hi + tol:
            if hi[i] > cur_hi:
                cur_hi = hi[i]
        else:
            olo[m] = cur_lo
            ohi[m] = cur_hi
            m += 1
            cur_lo = lo[i]
            cur_hi = hi[i]
    olo[m] = cur_lo
    ohi[m] = cur_hi
    m += 1
    return out_lo[:m].copy(), out_hi[:m].copy()


def best_mask(const double[::1] hi_sums, const cnp.int64_t[::1] hi_counts,
              const double[::1] lo_sums, const cnp.int64_t[::1] lo_counts,
              double z, double eps):
    """Exhaustive scan over hi x lo index pairs.

    Returns (error, count, hi_index, lo_index) minimizing
    (error, count, hi_index, lo_index) lexicographically.
    """
    cdef Py_ssize_t nh = hi_sums.shape[0], nl = lo_sums.shape[0]
    cdef Py_ssize_t a, b, best_a = 0, best_b = 0
    cdef double best_err = 1e308, err, hs
    cdef cnp.int64_t best_cnt = 1 << 30, cnt, hc
    for a in range(nh):
        hs = hi_sums[a]
        hc = hi_counts[a]
        for b in range(nl):
            cnt = hc + lo_counts[b]
            err = fabs(z - (hs + lo_sums[b])) - (<double>cnt) * eps
            if err < 0.0:
                err = 0.0
            if err < best_err or (err == best_err and cnt < best_cnt):
                best_err = err
                best_cnt = cnt
                best_a = a
                best_b = b
    return best_err, best_cnt, best_a, best_b


def closest_pair(const double[::1] a_sorted, const double[::1] b_sorted, double z):
    """Two-pointer search for min |z - (a + b)|; returns (dist, i, j)."""
    cdef Py_ssize_t na = a_sorted.shape[0], nb = b_sorted.shape[0]
    cdef Py_ssize_t i = 0, j = nb - 1, bi = 0, bj = 0
    cdef double best = 1e308, s, d
    if na == 0 or nb == 0:
        return best, -1, -1
    while i < na and j >= 0:
        s = a_sorted[i] + b_sorted[j]
        d = fabs(z - s)
        if d < best:
            best = d
            bi = i
            bj = j
        if s < z:
            i += 1
        else:
            j -= 1
    return best, bi, bj


def overlap_per_shift(const double[::1] g_lo, const double[::1] g_hi,
                      const double[::1] c_lo, const double[::1] c_hi,
                      const double[::1] shifts):
    """For each shift x: measure of (G + x) ∩ C for sorted disjoint G, C."""
    cdef Py_ssize_t ns = shifts.shape[0], ng = g_lo.shape[0], nc = c_lo.shape[0]
    out = np.zeros(ns, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t s, i, j
    cdef double x, lo, hi, ghi, tot
    for s in range(ns):
        x = shifts[s]
        tot = 0.0
        i = 0
        j = 0
        while i < ng and j < nc:
            ghi = g_hi[i] + x
            lo = g_lo[i] + x
            if c_lo[j] > lo:
                lo = c_lo[j]
            hi = ghi
            if c_hi[j] < hi:
                hi = c_hi[j]
            if hi > lo:
                tot += hi - lo
            if ghi < c_hi[j]:
                i += 1
            else:
                j += 1
        o[s] = tot
    return out
