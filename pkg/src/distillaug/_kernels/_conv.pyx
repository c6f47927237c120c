# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled conv/pool kernels; contracts match ``reference.py``.

Single-threaded with a fixed accumulation order (kernel row, kernel col,
input channel), so results are bit-reproducible run to run.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d_forward(x, w, b):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], h = xv.shape[1], wd = xv.shape[2]
    cdef Py_ssize_t cin = xv.shape[3], cout = wv.shape[3]
    y = np.empty((n, h, wd, cout), dtype=np.float64)
    cdef double[:, :, :, ::1] yv = y
    acc_arr = np.empty(cout, dtype=np.float64)
    cdef double[::1] acc = acc_arr
    cdef Py_ssize_t nn, ho, wo, kh, kw, hi, wi, ci, co
    cdef double xval
    for nn in range(n):
        for ho in range(h):
            for wo in range(wd):
                for co in range(cout):
                    acc[co] = bv[co]
                for kh in range(3):
                    hi = ho + kh - 1
                    if hi < 0 or hi >= h:
                        continue
                    for kw in range(3):
                        wi = wo + kw - 1
                        if wi < 0 or wi >= wd:
                            continue
                        for ci in range(cin):
                            xval = xv[nn, hi, wi, ci]
                            for co in range(cout):
                                acc[co] += xval * wv[kh, kw, ci, co]
                for co in range(cout):
                    yv[nn, ho, wo, co] = acc[co]
    return y


def conv2d_backward(x, w, dy):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[:, :, :, ::1] dyv = np.ascontiguousarray(dy, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], h = xv.shape[1], wd = xv.shape[2]
    cdef Py_ssize_t cin = xv.shape[3], cout = wv.shape[3]
    dx = np.zeros((n, h, wd, cin), dtype=np.float64)
    dw = np.zeros((3, 3, cin, cout), dtype=np.float64)
    db = np.zeros(cout, dtype=np.float64)
    cdef double[:, :, :, ::1] dxv = dx
    cdef double[:, :, :, ::1] dwv = dw
    cdef double[::1] dbv = db
    cdef Py_ssize_t nn, ho, wo, kh, kw, hi, wi, ci, co
    cdef double g, s
    for nn in range(n):
        for ho in range(h):
            for wo in range(wd):
                for co in range(cout):
                    dbv[co] += dyv[nn, ho, wo, co]
                for kh in range(3):
                    hi = ho + kh - 1
                    if hi < 0 or hi >= h:
                        continue
                    for kw in range(3):
                        wi = wo + kw - 1
                        if wi < 0 or wi >= wd:
                            continue
                        for ci in range(cin):
                            g = xv[nn, hi, wi, ci]
                            s = 0.0
                            for co in range(cout):
                                dwv[kh, kw, ci, co] += g * dyv[nn, ho, wo, co]
                                s += wv[kh, kw, ci, co] * dyv[nn, ho, wo, co]
                            dxv[nn, hi, wi, ci] += s
    return dx, dw, db


def maxpool2_forward(x):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], h = xv.shape[1], w = xv.shape[2], c = xv.shape[3]
    cdef Py_ssize_t ho = h // 2, wo = w // 2
    y = np.empty((n, ho, wo, c), dtype=np.float64)
    idx = np.empty((n, ho, wo, c), dtype=np.int8)
    cdef double[:, :, :, ::1] yv = y
    cdef signed char[:, :, :, ::1] iv = idx
    cdef Py_ssize_t nn, i, j, ch, r, s, slot
    cdef double best, v
    cdef signed char bslot
    for nn in range(n):
        for i in range(ho):
            for j in range(wo):
                for ch in range(c):
                    best = xv[nn, 2 * i, 2 * j, ch]
                    bslot = 0
                    slot = 0
                    for r in range(2):
                        for s in range(2):
                            v = xv[nn, 2 * i + r, 2 * j + s, ch]
                            if v > best:
                                best = v
                                bslot = <signed char> slot
                            slot += 1
                    yv[nn, i, j, ch] = best
                    iv[nn, i, j, ch] = bslot
    return y, idx


def maxpool2_backward(dy, idx, Py_ssize_t h, Py_ssize_t w):
    cdef double[:, :, :, ::1] dyv = np.ascontiguousarray(dy, dtype=np.float64)
    cdef signed char[:, :, :, ::1] iv = np.ascontiguousarray(idx, dtype=np.int8)
    cdef Py_ssize_t n = dyv.shape[0], ho = dyv.shape[1], wo = dyv.shape[2], c = dyv.shape[3]
    dx = np.zeros((n, h, w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] dxv = dx
    cdef Py_ssize_t nn, i, j, ch, slot
    for nn in range(n):
        for i in range(ho):
            for j in range(wo):
                for ch in range(c):
                    slot = iv[nn, i, j, ch]
                    dxv[nn, 2 * i + slot // 2, 2 * j + slot % 2, ch] += dyv[nn, i, j, ch]
    return dx
