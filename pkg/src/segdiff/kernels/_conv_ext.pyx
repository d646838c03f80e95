# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled im2col/col2im kernels for the 2-D convolution hot path."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def im2col(cnp.ndarray[cnp.float64_t, ndim=4] x, int kh, int kw, int stride, int pad):
    """Unfold NCHW input into (B, OH*OW, C*kh*kw) patches."""
    cdef int B = x.shape[0]
    cdef int C = x.shape[1]
    cdef int H = x.shape[2]
    cdef int W = x.shape[3]
    cdef int OH = (H + 2 * pad - kh) // stride + 1
    cdef int OW = (W + 2 * pad - kw) // stride + 1

    cdef cnp.ndarray[cnp.float64_t, ndim=3] col = np.zeros((B, OH * OW, C * kh * kw))
    cdef double[:, :, :, :] xv = x
    cdef double[:, :, :] cv = col
    cdef int b, c, oy, ox, i, j, iy, ix, row, base

    with nogil:
        for b in range(B):
            for oy in range(OH):
                for ox in range(OW):
                    row = oy * OW + ox
                    for c in range(C):
                        base = c * kh * kw
                        for i in range(kh):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= H:
                                continue
                            for j in range(kw):
                                ix = ox * stride + j - pad
                                if ix < 0 or ix >= W:
                                    continue
                                cv[b, row, base + i * kw + j] = xv[b, c, iy, ix]
    return col


def col2im(cnp.ndarray[cnp.float64_t, ndim=3] col, int C, int H, int W,
           int kh, int kw, int stride, int pad):
    """Fold (B, OH*OW, C*kh*kw) patch gradients back onto an NCHW grid (scatter-add)."""
    cdef int B = col.shape[0]
    cdef int OH = (H + 2 * pad - kh) // stride + 1
    cdef int OW = (W + 2 * pad - kw) // stride + 1

    cdef cnp.ndarray[cnp.float64_t, ndim=4] x = np.zeros((B, C, H, W))
    cdef double[:, :, :] cv = col
    cdef double[:, :, :, :] xv = x
    cdef int b, c, oy, ox, i, j, iy, ix, row, base

    with nogil:
        for b in range(B):
            for oy in range(OH):
                for ox in range(OW):
                    row = oy * OW + ox
                    for c in range(C):
                        base = c * kh * kw
                        for i in range(kh):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= H:
                                continue
                            for j in range(kw):
                                ix = ox * stride + j - pad
                                if ix < 0 or ix >= W:
                                    continue
                                xv[b, c, iy, ix] += cv[b, row, base + i * kw + j]
    return x
