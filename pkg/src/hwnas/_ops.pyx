# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled nondominated-sorting kernel.

Input objectives must already be normalized to minimization (callers flip
signs for maximized objectives). Dominance is the usual weak/strict pair:
a dominates b iff a <= b everywhere and a < b somewhere.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def nondominated_rank(double[:, ::1] pts):
    """Return the Pareto rank (0 = nondominated) of each row of `pts`."""
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t m = pts.shape[1]
    ranks_arr = np.full(n, -1, dtype=np.int32)
    if n == 0:
        return ranks_arr
    dom_arr = np.zeros((n, n), dtype=np.uint8)
    count_arr = np.zeros(n, dtype=np.int64)
    cdef cnp.int32_t[::1] ranks = ranks_arr
    cdef cnp.uint8_t[:, ::1] dom = dom_arr
    cdef cnp.int64_t[::1] count = count_arr
    cdef Py_ssize_t i, j, k
    cdef bint le, lt

    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            le = True
            lt = False
            for k in range(m):
                if pts[i, k] > pts[j, k]:
                    le = False
                    break
                if pts[i, k] < pts[j, k]:
                    lt = True
            if le and lt:
                dom[i, j] = 1
                count[j] += 1

    cdef Py_ssize_t assigned = 0
    cdef int rank = 0
    while assigned < n:
        for i in range(n):
            if ranks[i] < 0 and count[i] == 0:
                ranks[i] = rank
                assigned += 1
        # decrement after the whole front is marked so ties stay in one front
        for i in range(n):
            if ranks[i] == rank:
                for j in range(n):
                    if dom[i, j]:
                        count[j] -= 1
        rank += 1
    return ranks_arr
