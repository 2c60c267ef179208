# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: direct convolution, LCS table, BPE pair merge."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t o = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = h + 2 * pad - kh + 1, wo = wd + 2 * pad - kw + 1
    out_arr = np.zeros((n, o, ho, wo), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, oc, ic, i, j, p, q, i0, i1, j0, j1, off
    cdef double wv
    # innermost loop runs along a contiguous output row so it vectorises
    for b in range(n):
        for oc in range(o):
            for ic in range(c):
                for p in range(kh):
                    i0 = max(0, pad - p)
                    i1 = min(ho, h + pad - p)
                    for q in range(kw):
                        wv = w[oc, ic, p, q]
                        j0 = max(0, pad - q)
                        j1 = min(wo, wd + pad - q)
                        off = q - pad
                        for i in range(i0, i1):
                            for j in range(j0, j1):
                                out[b, oc, i, j] += wv * x[b, ic, i + p - pad, j + off]
    return out_arr


def conv2d_backward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                    double[:, :, :, ::1] gout, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t o = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = gout.shape[2], wo = gout.shape[3]
    gx_arr = np.zeros((n, c, h, wd), dtype=np.float64)
    gw_arr = np.zeros((o, c, kh, kw), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef Py_ssize_t b, oc, ic, i, j, p, q, i0, i1, j0, j1, off, yi
    cdef double wv, acc
    for b in range(n):
        for oc in range(o):
            for ic in range(c):
                for p in range(kh):
                    i0 = max(0, pad - p)
                    i1 = min(ho, h + pad - p)
                    for q in range(kw):
                        wv = w[oc, ic, p, q]
                        j0 = max(0, pad - q)
                        j1 = min(wo, wd + pad - q)
                        off = q - pad
                        acc = 0.0
                        for i in range(i0, i1):
                            yi = i + p - pad
                            for j in range(j0, j1):
                                gx[b, ic, yi, j + off] += wv * gout[b, oc, i, j]
                                acc += gout[b, oc, i, j] * x[b, ic, yi, j + off]
                        gw[oc, ic, p, q] += acc
    return gx_arr, gw_arr


def lcs_length(a, b):
    cdef cnp.int64_t[::1] av = np.ascontiguousarray(a, dtype=np.int64)
    cdef cnp.int64_t[::1] bv = np.ascontiguousarray(b, dtype=np.int64)
    cdef Py_ssize_t la = av.shape[0], lb = bv.shape[0], i, j
    if la == 0 or lb == 0:
        return 0
    prev_arr = np.zeros(lb + 1, dtype=np.int64)
    cur_arr = np.zeros(lb + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] prev = prev_arr
    cdef cnp.int64_t[::1] cur = cur_arr
    cdef cnp.int64_t[::1] tmp
    for i in range(la):
        cur[0] = 0
        for j in range(1, lb + 1):
            if av[i] == bv[j - 1]:
                cur[j] = prev[j - 1] + 1
            elif cur[j - 1] > prev[j]:
                cur[j] = cur[j - 1]
            else:
                cur[j] = prev[j]
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[lb])


def bpe_merge(seq, cnp.int64_t left, cnp.int64_t right, cnp.int64_t new):
    cdef cnp.int64_t[::1] s = np.ascontiguousarray(seq, dtype=np.int64)
    cdef Py_ssize_t n = s.shape[0], i = 0, k = 0
    out_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    while i < n:
        if i + 1 < n and s[i] == left and s[i + 1] == right:
            out[k] = new
            i += 2
        else:
            out[k] = s[i]
            i += 1
        k += 1
    return out_arr[:k].copy()
