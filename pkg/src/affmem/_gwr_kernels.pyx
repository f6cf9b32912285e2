# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled GWR hot loops. Must stay bit-compatible with _gwr_fallback.py:
distances are accumulated dimension by dimension in index order."""
from libc.math cimport exp


def bmu2(const double[:, ::1] W, Py_ssize_t n, const double[::1] x):
    """Best and second-best unit among the first ``n`` rows (ties: lowest index).

    Returns ``(b, s, d_b, d_s)``; ``s = -1`` and ``d_s = inf`` when ``n == 1``.
    """
    cdef Py_ssize_t j, k, dim = x.shape[0]
    cdef Py_ssize_t b = -1, s = -1
    cdef double d, diff
    cdef double db = float("inf"), ds = float("inf")
    if n < 1:
        raise ValueError("memory has no neurons")
    if W.shape[1] != dim:
        raise ValueError("input dimension does not match neuron weights")
    for j in range(n):
        d = 0.0
        for k in range(dim):
            diff = x[k] - W[j, k]
            d = d + diff * diff
        if d < db:
            ds = db
            s = b
            db = d
            b = j
        elif d < ds:
            ds = d
            s = j
    return b, s, db, ds


def sq_distances(const double[:, ::1] W, Py_ssize_t n, const double[::1] x, double[::1] out):
    cdef Py_ssize_t j, k, dim = x.shape[0]
    cdef double d, diff
    for j in range(n):
        d = 0.0
        for k in range(dim):
            diff = x[k] - W[j, k]
            d = d + diff * diff
        out[j] = d


def adapt(double[:, ::1] W, Py_ssize_t j, const double[::1] x, double rate, double h, double a):
    """In-place ``w_j += rate * h * (x - w_j) * (1 - a)``."""
    cdef Py_ssize_t k
    cdef double c = rate * h
    cdef double g = 1.0 - a
    for k in range(x.shape[0]):
        W[j, k] = W[j, k] + c * (x[k] - W[j, k]) * g


cpdef double habituate(double h, double tau, double kappa):
    cdef double out = h + (tau * kappa * (1.0 - h) - tau)
    if out < 0.0:
        return 0.0
    if out > 1.0:
        return 1.0
    return out


cpdef double activity(double sq_dist):
    return exp(-sq_dist)
