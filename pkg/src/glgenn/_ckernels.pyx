# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled blade-product kernels.

out[n, c, a ^ b] += table[c, a, b] * x[n, c, a] * y[n, c, b]
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def xor_bilinear(const double[:, :, ::1] x, const double[:, :, ::1] y, const double[:, :, ::1] table):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], d = x.shape[2]
    cdef Py_ssize_t tc = table.shape[0]
    out_arr = np.zeros((n, c, d), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, ch, a, b, t
    cdef double xa, w
    for i in range(n):
        for ch in range(c):
            t = ch if tc > 1 else 0
            for a in range(d):
                xa = x[i, ch, a]
                if xa == 0.0:
                    continue
                for b in range(d):
                    w = table[t, a, b]
                    if w != 0.0:
                        out[i, ch, a ^ b] += w * xa * y[i, ch, b]
    return out_arr


def xor_bilinear_table_grad(const double[:, :, ::1] g, const double[:, :, ::1] x,
                            const double[:, :, ::1] y, Py_ssize_t table_channels):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], d = x.shape[2]
    grad_arr = np.zeros((table_channels, d, d), dtype=np.float64)
    cdef double[:, :, ::1] grad = grad_arr
    cdef Py_ssize_t i, ch, a, b, t
    cdef double xa
    for i in range(n):
        for ch in range(c):
            t = ch if table_channels > 1 else 0
            for a in range(d):
                xa = x[i, ch, a]
                if xa == 0.0:
                    continue
                for b in range(d):
                    grad[t, a, b] += xa * y[i, ch, b] * g[i, ch, a ^ b]
    return grad_arr
