"""Pure-numpy im2col/col2im, used when the compiled extension is unavailable.

Both functions follow the kh*kw-slice formulation: a short Python loop over
kernel offsets with fully vectorized strided slices inside. Layouts match the
compiled kernels exactly: patches are (B, OH*OW, C*kh*kw).
"""

import numpy as np


def _out_size(H, W, kh, kw, stride, pad):
    return (H + 2 * pad - kh) // stride + 1, (W + 2 * pad - kw) // stride + 1


def im2col(x, kh, kw, stride, pad):
    B, C, H, W = x.shape
    OH, OW = _out_size(H, W, kh, kw, stride, pad)
    if pad > 0:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    col = np.empty((B, C, kh, kw, OH, OW))
    for i in range(kh):
        for j in range(kw):
            col[:, :, i, j] = x[:, :, i : i + stride * OH : stride, j : j + stride * OW : stride]
    # (B, C, kh, kw, OH, OW) -> (B, OH*OW, C*kh*kw)
    return np.ascontiguousarray(col.transpose(0, 4, 5, 1, 2, 3)).reshape(B, OH * OW, C * kh * kw)


def col2im(col, C, H, W, kh, kw, stride, pad):
    B = col.shape[0]
    OH, OW = _out_size(H, W, kh, kw, stride, pad)
    col = col.reshape(B, OH, OW, C, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    x = np.zeros((B, C, H + 2 * pad, W + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            x[:, :, i : i + stride * OH : stride, j : j + stride * OW : stride] += col[:, :, i, j]
    if pad > 0:
        x = x[:, :, pad : pad + H, pad : pad + W]
    return np.ascontiguousarray(x)
