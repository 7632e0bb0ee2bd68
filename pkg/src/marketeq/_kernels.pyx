# cython: language_level=3
"""Compiled dynamics kernels; mirrors _kernels_py exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport pow

cnp.import_array()

ROW_POS = 1
ROW_NEG = -1
ROW_COBB = 0
ROW_LEONTIEF = 2


def nested_spend(cnp.int64_t[:] parent, double[:] rhohat, double[:] cw,
                 cnp.int64_t[:] leaf, double[:] p, double B):
    """Per-good spending and root price index for one nested-CES tree.

    Nodes are in breadth-first order, parents before children. cw holds the
    contribution weight w_c^(1 - rhohat(parent)); leaf is the good index for
    leaf nodes and -1 for internal ones.
    """
    cdef Py_ssize_t count = parent.shape[0]
    cdef Py_ssize_t m = p.shape[0]
    cdef cnp.ndarray spend_arr = np.zeros(m)
    cdef double[:] spend = spend_arr
    cdef double[:] index = np.empty(count)
    cdef double[:] contrib = np.zeros(count)
    cdef double[:] agg = np.zeros(count)
    cdef double[:] budget = np.empty(count)
    cdef Py_ssize_t i
    cdef cnp.int64_t par
    for i in range(count - 1, -1, -1):
        if leaf[i] >= 0:
            index[i] = p[leaf[i]]
        else:
            index[i] = pow(agg[i], 1.0 / rhohat[i])
        par = parent[i]
        if par >= 0:
            contrib[i] = cw[i] * pow(index[i], rhohat[par])
            agg[par] += contrib[i]
    budget[0] = B
    for i in range(count):
        par = parent[i]
        if par >= 0:
            budget[i] = budget[par] * contrib[i] / agg[par]
        if leaf[i] >= 0:
            spend[leaf[i]] += budget[i]
    return spend_arr, float(index[0])


def flat_ces_spend(double[:, :] a1mr, double[:] rhohat, double[:] p, double[:] B):
    """Row-wise CES spending: w_ij = a1mr_ij * p_j^rhohat_i, rows scaled to B_i."""
    cdef Py_ssize_t n = a1mr.shape[0]
    cdef Py_ssize_t m = a1mr.shape[1]
    cdef cnp.ndarray out_arr = np.zeros((n, m))
    cdef double[:, :] out = out_arr
    cdef Py_ssize_t i, j
    cdef double total, w
    for i in range(n):
        total = 0.0
        for j in range(m):
            w = a1mr[i, j] * pow(p[j], rhohat[i])
            out[i, j] = w
            total += w
        for j in range(m):
            out[i, j] *= B[i] / total
    return out_arr


def ces_mirror_update(double[:, :] b, double[:, :] a, cnp.int64_t[:] code,
                      double[:] rho, double[:] B):
    """One proportional-response step for public-goods spending, CES agents.

    Row codes: 1 substitutes (0 < rho <= 1), -1 complements (rho < 0),
    0 Cobb-Douglas, 2 Leontief. Each row of b must be positive exactly where
    the matching row of a is.
    """
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t m = b.shape[1]
    cdef cnp.ndarray out_arr = np.zeros((n, m))
    cdef double[:, :] out = out_arr
    cdef double[:] x = np.zeros(m)
    cdef double[:] num = np.zeros(m)
    cdef Py_ssize_t i, j
    cdef double total
    for j in range(m):
        for i in range(n):
            x[j] += b[i, j]
    for i in range(n):
        total = 0.0
        for j in range(m):
            if a[i, j] <= 0.0:
                num[j] = 0.0
                continue
            if code[i] == 1:
                num[j] = a[i, j] * pow(x[j], rho[i])
            elif code[i] == -1:
                num[j] = pow(a[i, j] * pow(x[j] / b[i, j], rho[i]), 1.0 / (1.0 - rho[i]))
            elif code[i] == 2:
                num[j] = a[i, j] * b[i, j] / x[j]
            else:
                num[j] = a[i, j]
            total += num[j]
        for j in range(m):
            if num[j] > 0.0:
                out[i, j] = B[i] * num[j] / total
    return out_arr
