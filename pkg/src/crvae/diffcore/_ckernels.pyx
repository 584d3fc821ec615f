# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im. Same column layout and summation order as _kernels_py."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


cdef void _im2col(const real[:, :, :, ::1] x, real[:, ::1] cols,
                  int kh, int kw, int stride, int pad, int ho, int wo) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ci, i, j, ni, y, xx, row, col, iy, ix
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                row = (ci * kh + i) * kw + j
                for ni in range(n):
                    for y in range(ho):
                        iy = y * stride + i - pad
                        col = (ni * ho + y) * wo
                        if iy < 0 or iy >= h:
                            for xx in range(wo):
                                cols[row, col + xx] = 0
                            continue
                        for xx in range(wo):
                            ix = xx * stride + j - pad
                            if ix < 0 or ix >= w:
                                cols[row, col + xx] = 0
                            else:
                                cols[row, col + xx] = x[ni, ci, iy, ix]


cdef void _col2im(const real[:, ::1] cols, real[:, :, :, ::1] out,
                  int kh, int kw, int stride, int pad, int ho, int wo) noexcept nogil:
    cdef Py_ssize_t n = out.shape[0], c = out.shape[1], h = out.shape[2], w = out.shape[3]
    cdef Py_ssize_t ci, i, j, ni, y, xx, row, col, iy, ix
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                row = (ci * kh + i) * kw + j
                for ni in range(n):
                    for y in range(ho):
                        iy = y * stride + i - pad
                        if iy < 0 or iy >= h:
                            continue
                        col = (ni * ho + y) * wo
                        for xx in range(wo):
                            ix = xx * stride + j - pad
                            if 0 <= ix < w:
                                out[ni, ci, iy, ix] += cols[row, col + xx]


def im2col(x, int kh, int kw, int stride, int pad):
    x = np.ascontiguousarray(x)
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int ho = (h + 2 * pad - kh) // stride + 1
    cdef int wo = (w + 2 * pad - kw) // stride + 1
    cols = np.empty((c * kh * kw, n * ho * wo), dtype=x.dtype)
    if x.dtype == np.float32:
        _im2col[float](x, cols, kh, kw, stride, pad, ho, wo)
    elif x.dtype == np.float64:
        _im2col[double](x, cols, kh, kw, stride, pad, ho, wo)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return cols


def col2im(cols, tuple shape, int kh, int kw, int stride, int pad):
    cols = np.ascontiguousarray(cols)
    cdef int n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef int ho = (h + 2 * pad - kh) // stride + 1
    cdef int wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _col2im[float](cols, out, kh, kw, stride, pad, ho, wo)
    elif cols.dtype == np.float64:
        _col2im[double](cols, out, kh, kw, stride, pad, ho, wo)
    else:
        raise TypeError(f"unsupported dtype {cols.dtype}")
    return out
