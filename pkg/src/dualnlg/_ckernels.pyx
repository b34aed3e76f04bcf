# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Mirrors ``_kernels_py`` function for function."""

import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy

from . import _kernels_py

cnp.import_array()

BACKEND = "cython"


def im2col(const double[:, :, ::1] x, Py_ssize_t width, Py_ssize_t stride):
    cdef Py_ssize_t b_n = x.shape[0], t_n = x.shape[1], d = x.shape[2]
    cdef Py_ssize_t n_out = (t_n - width) // stride + 1
    out = np.empty((b_n, n_out, width, d))
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t b, t, j
    with nogil:
        for b in range(b_n):
            for t in range(n_out):
                for j in range(width):
                    memcpy(&o[b, t, j, 0], &x[b, t * stride + j, 0], d * sizeof(double))
    return out


def col2im(const double[:, :, :, ::1] cols, Py_ssize_t length, Py_ssize_t stride):
    cdef Py_ssize_t b_n = cols.shape[0], n_out = cols.shape[1]
    cdef Py_ssize_t width = cols.shape[2], d = cols.shape[3]
    out = np.zeros((b_n, length, d))
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t b, t, j, k, row
    with nogil:
        # same accumulation order as the numpy twin: tap-major
        for b in range(b_n):
            for j in range(width):
                for t in range(n_out):
                    row = t * stride + j
                    for k in range(d):
                        o[b, row, k] += cols[b, t, j, k]
    return out


# Scalar libm tanh/exp lose to numpy's vectorized transcendentals, so the
# forward gate activation is shared with the numpy twin (see benchmarks/).
lstm_forward = _kernels_py.lstm_forward


def lstm_backward(const double[:, ::1] dh, const double[:, ::1] dc,
                  const double[:, ::1] c_prev, const double[:, ::1] gates,
                  const double[:, ::1] tanh_c):
    cdef Py_ssize_t b_n = c_prev.shape[0], hid = c_prev.shape[1]
    dz_arr = np.empty((b_n, 4 * hid))
    dcp_arr = np.empty((b_n, hid))
    cdef double[:, ::1] dz = dz_arr, dcp = dcp_arr
    cdef Py_ssize_t b, k
    cdef double ig, fg, og, gg, tcv, dct
    with nogil:
        for b in range(b_n):
            for k in range(hid):
                ig = gates[b, k]
                fg = gates[b, hid + k]
                og = gates[b, 2 * hid + k]
                gg = gates[b, 3 * hid + k]
                tcv = tanh_c[b, k]
                dct = dc[b, k] + dh[b, k] * og * (1.0 - tcv * tcv)
                dz[b, k] = dct * gg * ig * (1.0 - ig)
                dz[b, hid + k] = dct * c_prev[b, k] * fg * (1.0 - fg)
                dz[b, 2 * hid + k] = dh[b, k] * tcv * og * (1.0 - og)
                dz[b, 3 * hid + k] = dct * ig * (1.0 - gg * gg)
                dcp[b, k] = dct * fg
    return dz_arr, dcp_arr


def scatter_add_rows(Py_ssize_t n_rows, const cnp.int64_t[::1] idx, const double[:, ::1] src):
    cdef Py_ssize_t n = src.shape[0], d = src.shape[1]
    out = np.zeros((n_rows, d))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, k, r
    with nogil:
        for i in range(n):
            r = idx[i]
            for k in range(d):
                o[r, k] += src[i, k]
    return out
