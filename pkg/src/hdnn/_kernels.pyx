# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled matmul kernel.

Built with -ffp-contract=off so every product is rounded before it is added;
the result is bitwise identical to the numpy fallback and a naive triple loop.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef extern from "_matmul.h" nogil:
    void hdnn_matmul(const double* a, const double* b, double* c,
                     Py_ssize_t m, Py_ssize_t kk, Py_ssize_t n)


def matmul(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], kk = a.shape[1], n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] c = out
    if m == 0 or n == 0 or kk == 0:
        return out
    with nogil:
        hdnn_matmul(&a[0, 0], &b[0, 0], &c[0, 0], m, kk, n)
    return out
