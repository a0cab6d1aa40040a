# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled lattice kernels.  Contracts match ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs

cnp.import_array()

ctypedef fused scalar_t:
    double
    double complex


def laplacian7(scalar_t[:, :, ::1] u, double h):
    cdef Py_ssize_t n0 = u.shape[0], n1 = u.shape[1], n2 = u.shape[2]
    cdef Py_ssize_t i, j, k
    cdef double inv = 1.0 / (h * h)
    if scalar_t is double:
        out_arr = np.zeros((n0, n1, n2), dtype=np.float64)
    else:
        out_arr = np.zeros((n0, n1, n2), dtype=np.complex128)
    cdef scalar_t[:, :, ::1] out = out_arr
    with nogil:
        for i in range(1, n0 - 1):
            for j in range(1, n1 - 1):
                for k in range(1, n2 - 1):
                    out[i, j, k] = (u[i + 1, j, k] + u[i - 1, j, k]
                                    + u[i, j + 1, k] + u[i, j - 1, k]
                                    + u[i, j, k + 1] + u[i, j, k - 1]
                                    - 6.0 * u[i, j, k]) * inv
    return out_arr


cdef inline double _absval(scalar_t z) nogil:
    if scalar_t is double:
        return fabs(z)
    else:
        return abs(z)


def translation_l1(scalar_t[:, :, ::1] f, shift):
    cdef Py_ssize_t s0 = shift[0], s1 = shift[1], s2 = shift[2]
    cdef Py_ssize_t n0 = f.shape[0], n1 = f.shape[1], n2 = f.shape[2]
    cdef Py_ssize_t i, j, k, a, b, c
    cdef double total = 0.0
    cdef scalar_t fx, fs
    cdef scalar_t zero = 0
    with nogil:
        # x runs over the union of supp f and supp f(. - s)
        for i in range(min(0, s0), max(n0, n0 + s0)):
            for j in range(min(0, s1), max(n1, n1 + s1)):
                for k in range(min(0, s2), max(n2, n2 + s2)):
                    if 0 <= i < n0 and 0 <= j < n1 and 0 <= k < n2:
                        fx = f[i, j, k]
                    else:
                        fx = zero
                    a = i - s0
                    b = j - s1
                    c = k - s2
                    if 0 <= a < n0 and 0 <= b < n1 and 0 <= c < n2:
                        fs = f[a, b, c]
                    else:
                        fs = zero
                    total += _absval(fs - fx)
    return total


cdef inline void _weights(double t, double* w) nogil:
    w[0] = -t * (t - 1.0) * (t - 2.0) / 6.0
    w[1] = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0
    w[2] = -(t + 1.0) * t * (t - 2.0) / 2.0
    w[3] = (t + 1.0) * t * (t - 1.0) / 6.0


def interp_cubic(scalar_t[:, :, ::1] values, origin, double h,
                 double[:, ::1] points):
    cdef Py_ssize_t m = points.shape[0]
    cdef Py_ssize_t n[3]
    cdef double o[3]
    n[0] = values.shape[0]; n[1] = values.shape[1]; n[2] = values.shape[2]
    o[0] = origin[0]; o[1] = origin[1]; o[2] = origin[2]
    if scalar_t is double:
        out_arr = np.zeros(m, dtype=np.float64)
    else:
        out_arr = np.zeros(m, dtype=np.complex128)
    cdef scalar_t[::1] out = out_arr
    cdef Py_ssize_t p, d, a, b, c
    cdef Py_ssize_t base[3]
    cdef double w[3][4]
    cdef double s, wab
    cdef scalar_t acc
    with nogil:
        for p in range(m):
            for d in range(3):
                s = (points[p, d] - o[d]) / h
                base[d] = <Py_ssize_t>floor(s) - 1
                if base[d] < 0:
                    base[d] = 0
                if base[d] > n[d] - 4:
                    base[d] = n[d] - 4
                _weights(s - (base[d] + 1), w[d])
            acc = 0
            for a in range(4):
                for b in range(4):
                    wab = w[0][a] * w[1][b]
                    for c in range(4):
                        acc = acc + wab * w[2][c] * values[base[0] + a, base[1] + b, base[2] + c]
            out[p] = acc
    return out_arr
