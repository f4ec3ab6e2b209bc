# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled recurrence kernels; same contract as ``_rnn_py``."""

import numpy as np
from libc.math cimport tanh


def recur_forward(X, Wh, h0):
    cdef const double[:, ::1] X_ = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] W = np.ascontiguousarray(Wh, dtype=np.float64)
    out = np.empty_like(X_)
    cdef double[:, ::1] hs = out
    cdef Py_ssize_t T = X_.shape[0], H = X_.shape[1], t, i, k
    cdef double acc
    out[0] = h0
    with nogil:
        for t in range(1, T):
            for i in range(H):
                acc = X_[t, i]
                for k in range(H):
                    acc = acc + W[i, k] * hs[t - 1, k]
                hs[t, i] = tanh(acc)
    return out


def recur_backward(hs, dhs, Wh):
    cdef const double[:, ::1] h = np.ascontiguousarray(hs, dtype=np.float64)
    cdef const double[:, ::1] g = np.ascontiguousarray(dhs, dtype=np.float64)
    cdef const double[:, ::1] W = np.ascontiguousarray(Wh, dtype=np.float64)
    out = np.zeros_like(h)
    cdef double[:, ::1] da = out
    cdef Py_ssize_t T = h.shape[0], H = h.shape[1], t, i, k
    carry_arr = np.zeros(H)
    cdef double[::1] carry = carry_arr
    with nogil:
        for t in range(T - 1, 0, -1):
            for i in range(H):
                da[t, i] = (g[t, i] + carry[i]) * (1.0 - h[t, i] * h[t, i])
            for k in range(H):
                carry[k] = 0.0
            for i in range(H):
                for k in range(H):
                    carry[k] = carry[k] + W[i, k] * da[t, i]
    return out
