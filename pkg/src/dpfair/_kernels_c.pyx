# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled Monte Carlo hot kernels.

Single-pass fused loops over the caller-supplied uniforms; see
``_kernels_py`` for the reference semantics.  All array arguments are
1-D contiguous float64.
"""

import numpy as np

from libc.math cimport fabs, floor, log

cdef double _TINY = 2.0**-53

BACKEND = "cython"


cdef inline double _lap(double u, double scale) noexcept nogil:
    cdef double half = u - 0.5
    cdef double t = 1.0 - 2.0 * fabs(half)
    if t < _TINY:
        t = _TINY
    if half > 0.0:
        return -scale * log(t)
    elif half < 0.0:
        return scale * log(t)
    return 0.0


def laplace_from_uniform(double[::1] u, double scale):
    cdef Py_ssize_t m = u.shape[0]
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t j
    with nogil:
        for j in range(m):
            o[j] = _lap(u[j], scale)
    return out


def clipped_laplace_moments(double x, double level, double scale, double[::1] u):
    cdef Py_ssize_t m = u.shape[0]
    cdef double s1 = 0.0, s2 = 0.0, v
    cdef Py_ssize_t j
    with nogil:
        for j in range(m):
            v = x + _lap(u[j], scale)
            if v < level:
                v = level
            s1 += v
            s2 += v * v
    return s1, s2


def threshold_flip_count(double x, double level, bint strict, double scale, double[::1] u):
    cdef Py_ssize_t m = u.shape[0]
    cdef bint true_val, noisy_val
    cdef double v
    cdef long flips = 0
    cdef Py_ssize_t j
    if strict:
        true_val = x > level
    else:
        true_val = x >= level
    with nogil:
        for j in range(m):
            v = x + _lap(u[j], scale)
            if strict:
                noisy_val = v > level
            else:
                noisy_val = v >= level
            if noisy_val != true_val:
                flips += 1
    return flips


def stochastic_round_from_uniform(double[::1] z, double[::1] u):
    cdef Py_ssize_t m = z.shape[0]
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    cdef double lo
    cdef Py_ssize_t j
    with nogil:
        for j in range(m):
            lo = floor(z[j])
            o[j] = lo + 1.0 if u[j] < z[j] - lo else lo
    return out
