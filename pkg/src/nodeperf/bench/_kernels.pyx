# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled streaming kernels. Each call works on ``[lo, hi)`` and runs all
iterations without the GIL so pinned worker threads stream concurrently."""


def fill(double[::1] a, double value, Py_ssize_t lo, Py_ssize_t hi):
    cdef Py_ssize_t i
    with nogil:
        for i in range(lo, hi):
            a[i] = value


def copy(double[::1] a, const double[::1] b, Py_ssize_t lo, Py_ssize_t hi, long iterations):
    cdef Py_ssize_t i
    cdef long it
    with nogil:
        for it in range(iterations):
            for i in range(lo, hi):
                a[i] = b[i]


def triad(double[::1] a, const double[::1] b, const double[::1] c, double s,
          Py_ssize_t lo, Py_ssize_t hi, long iterations):
    cdef Py_ssize_t i
    cdef long it
    with nogil:
        for it in range(iterations):
            for i in range(lo, hi):
                a[i] = b[i] + s * c[i]
