# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col/col2im kernels for float32 (C, H, W) samples.

Same column layout as the numpy backend: row index = (c*kh + i)*kw + j,
column index = oh*ow_count + ow. Border handling is done with precomputed
valid output ranges so the inner loops carry no bounds checks.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

NAME = "cython"


def conv_out_size(int size, int k, int stride, int pad):
    return (size + 2 * pad - k) // stride + 1


cdef inline int _ceil_div(int a, int b) nogil:
    # only called with a > 0, b > 0, where C truncation matches floor
    return (a + b - 1) // b


def im2col(cnp.ndarray[cnp.float32_t, ndim=3] x, int kh, int kw,
           int sh, int sw, int ph, int pw, out=None):
    cdef int c = x.shape[0]
    cdef int h = x.shape[1]
    cdef int w = x.shape[2]
    cdef int oh = (h + 2 * ph - kh) // sh + 1
    cdef int ow = (w + 2 * pw - kw) // sw + 1
    if out is None:
        out = np.empty((c * kh * kw, oh * ow), dtype=np.float32)
    cdef cnp.ndarray[cnp.float32_t, ndim=2] cols = out
    cdef float[:, :, ::1] xv = np.ascontiguousarray(x)
    cdef float[:, ::1] cv = cols
    cdef int ci, i, j, r, o_h, o_w, ih, iw, lo, hi, base
    with nogil:
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    r = (ci * kh + i) * kw + j
                    # output columns whose input row/col fall inside the image
                    for o_h in range(oh):
                        ih = o_h * sh + i - ph
                        base = o_h * ow
                        if ih < 0 or ih >= h:
                            for o_w in range(ow):
                                cv[r, base + o_w] = 0.0
                            continue
                        lo = 0 if j >= pw else _ceil_div(pw - j, sw)
                        hi = (w - 1 + pw - j) // sw + 1
                        if hi > ow:
                            hi = ow
                        for o_w in range(0, lo):
                            cv[r, base + o_w] = 0.0
                        iw = lo * sw + j - pw
                        for o_w in range(lo, hi):
                            cv[r, base + o_w] = xv[ci, ih, iw]
                            iw += sw
                        for o_w in range(hi, ow):
                            cv[r, base + o_w] = 0.0
    return cols


def im2col_cnhw(cnp.ndarray[cnp.float32_t, ndim=4] x, int kh, int kw,
                int sh, int sw, int ph, int pw, out=None):
    cdef int c = x.shape[0]
    cdef int n = x.shape[1]
    cdef int h = x.shape[2]
    cdef int w = x.shape[3]
    cdef int oh = (h + 2 * ph - kh) // sh + 1
    cdef int ow = (w + 2 * pw - kw) // sw + 1
    if out is None:
        out = np.empty((c * kh * kw, n * oh * ow), dtype=np.float32)
    cdef cnp.ndarray[cnp.float32_t, ndim=2] cols = out
    cdef float[:, :, :, ::1] xv = np.ascontiguousarray(x)
    cdef float[:, ::1] cv = cols
    cdef int ci, i, j, r, ni, o_h, o_w, ih, iw, lo, hi, base
    with nogil:
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    r = (ci * kh + i) * kw + j
                    for ni in range(n):
                        for o_h in range(oh):
                            ih = o_h * sh + i - ph
                            base = (ni * oh + o_h) * ow
                            if ih < 0 or ih >= h:
                                for o_w in range(ow):
                                    cv[r, base + o_w] = 0.0
                                continue
                            lo = 0 if j >= pw else _ceil_div(pw - j, sw)
                            hi = (w - 1 + pw - j) // sw + 1
                            if hi > ow:
                                hi = ow
                            for o_w in range(0, lo):
                                cv[r, base + o_w] = 0.0
                            iw = lo * sw + j - pw
                            for o_w in range(lo, hi):
                                cv[r, base + o_w] = xv[ci, ni, ih, iw]
                                iw += sw
                            for o_w in range(hi, ow):
                                cv[r, base + o_w] = 0.0
    return cols


def col2im_cnhw(cnp.ndarray[cnp.float32_t, ndim=2] cols, int c, int n,
                int h, int w, int kh, int kw, int sh, int sw,
                int ph, int pw, out=None):
    cdef int oh = (h + 2 * ph - kh) // sh + 1
    cdef int ow = (w + 2 * pw - kw) // sw + 1
    if out is None:
        out = np.zeros((c, n, h, w), dtype=np.float32)
    else:
        out[...] = 0.0
    cdef cnp.ndarray[cnp.float32_t, ndim=4] x = out
    cdef float[:, :, :, ::1] xv = x
    cdef float[:, ::1] cv = np.ascontiguousarray(cols)
    cdef int ci, i, j, r, ni, o_h, o_w, ih, iw, lo, hi, base
    with nogil:
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    r = (ci * kh + i) * kw + j
                    for ni in range(n):
                        for o_h in range(oh):
                            ih = o_h * sh + i - ph
                            if ih < 0 or ih >= h:
                                continue
                            base = (ni * oh + o_h) * ow
                            lo = 0 if j >= pw else _ceil_div(pw - j, sw)
                            hi = (w - 1 + pw - j) // sw + 1
                            if hi > ow:
                                hi = ow
                            iw = lo * sw + j - pw
                            for o_w in range(lo, hi):
                                xv[ci, ni, ih, iw] += cv[r, base + o_w]
                                iw += sw
    return x


def col2im(cnp.ndarray[cnp.float32_t, ndim=2] cols, int c, int h, int w,
           int kh, int kw, int sh, int sw, int ph, int pw, out=None):
    cdef int oh = (h + 2 * ph - kh) // sh + 1
    cdef int ow = (w + 2 * pw - kw) // sw + 1
    if out is None:
        out = np.zeros((c, h, w), dtype=np.float32)
    else:
        out[...] = 0.0
    cdef cnp.ndarray[cnp.float32_t, ndim=3] x = out
    cdef float[:, :, ::1] xv = x
    cdef float[:, ::1] cv = np.ascontiguousarray(cols)
    cdef int ci, i, j, r, o_h, o_w, ih, iw, lo, hi, base
    with nogil:
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    r = (ci * kh + i) * kw + j
                    for o_h in range(oh):
                        ih = o_h * sh + i - ph
                        if ih < 0 or ih >= h:
                            continue
                        base = o_h * ow
                        lo = 0 if j >= pw else _ceil_div(pw - j, sw)
                        hi = (w - 1 + pw - j) // sw + 1
                        if hi > ow:
                            hi = ow
                        iw = lo * sw + j - pw
                        for o_w in range(lo, hi):
                            xv[ci, ih, iw] += cv[r, base + o_w]
                            iw += sw
    return x
