"""Neural-network operations built on the autodiff tape.

conv2d runs on the selected kernel backend (compiled or numpy im2col);
group-norm and attention have hand-written backwards, checked against finite
differences in the test suite.
"""

import numpy as np

from . import kernels
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor, _make, add, concat, matmul, reshape, softmax_last, transpose


def conv2d(x, weight, bias, stride=1, padding=0):
    """2-D cross-correlation over NCHW input with per-output-channel bias.

    Output spatial size is floor((H + 2*padding - k)/stride) + 1.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input/weight, got {x.shape}, {weight.shape}")
    B, Cin, H, W = x.shape
    Cout, Cw, kh, kw = weight.shape
    if Cw != Cin:
        raise DimensionError(f"conv2d channel mismatch: input has {Cin}, weight expects {Cw}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigurationError(f"conv2d kernel extents must be odd, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ConfigurationError(f"conv2d stride/padding out of range: {stride}, {padding}")
    if bias.shape != (Cout,):
        raise DimensionError(f"conv2d bias shape {bias.shape} != ({Cout},)")
    OH = (H + 2 * padding - kh) // stride + 1
    OW = (W + 2 * padding - kw) // stride + 1
    if OH < 1 or OW < 1:
        raise DimensionError(f"conv2d output would be empty for input {H}x{W}")

    wmat = weight.data.reshape(Cout, Cin * kh * kw)
    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        # 1x1 convs reduce to a channel matmul; skip im2col entirely.
        xm = x.data.reshape(B, Cin, H * W)
        y = wmat @ xm + bias.data[:, None]

        def backward_1x1(gy):
            gy2 = gy.reshape(B, Cout, H * W)
            gx = (wmat.T @ gy2).reshape(x.shape)
            gw = np.tensordot(gy2, xm, axes=([0, 2], [0, 2])).reshape(weight.shape)
            return gx, gw, gy.sum(axis=(0, 2, 3))

        return _make(y.reshape(B, Cout, H, W), (x, weight, bias), backward_1x1)

    col = kernels.im2col(x.data, kh, kw, stride, padding)
    y = col @ wmat.T + bias.data
    y = np.ascontiguousarray(y.reshape(B, OH, OW, Cout).transpose(0, 3, 1, 2))

    def backward(gy):
        gy2 = gy.transpose(0, 2, 3, 1).reshape(B, OH * OW, Cout)
        # im2col is recomputed here instead of saved: flat memory beats speed
        # at desk scale.
        col_b = kernels.im2col(x.data, kh, kw, stride, padding)
        gw = np.tensordot(gy2, col_b, axes=([0, 1], [0, 1])).reshape(weight.shape)
        gcol = gy2 @ wmat
        gx = kernels.col2im(gcol, Cin, H, W, kh, kw, stride, padding)
        gb = gy.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return _make(y, (x, weight, bias), backward)


def group_norm(x, groups, gamma, beta, eps=1e-5):
    """Normalize per (batch, channel-group) to zero mean / unit variance, then
    apply the per-channel affine."""
    if x.data.ndim != 4:
        raise DimensionError(f"group_norm expects NCHW input, got {x.shape}")
    B, C, H, W = x.shape
    if C % groups != 0:
        raise ConfigurationError(f"channel count {C} not divisible by {groups} groups")
    if eps <= 0:
        raise ConfigurationError("group_norm eps must be positive")
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"group_norm affine shapes {gamma.shape}/{beta.shape} != ({C},)")

    xg = x.data.reshape(B, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(B, C, H, W)
    gview = gamma.data.reshape(1, C, 1, 1)
    y = xhat * gview + beta.data.reshape(1, C, 1, 1)

    def backward(gy):
        ggamma = (gy * xhat).sum(axis=(0, 2, 3))
        gbeta = gy.sum(axis=(0, 2, 3))
        gh = (gy * gview).reshape(B, groups, -1)
        hg = xhat.reshape(B, groups, -1)
        m1 = gh.mean(axis=2, keepdims=True)
        m2 = (gh * hg).mean(axis=2, keepdims=True)
        gx = (gh - m1 - hg * m2) * inv
        return gx.reshape(B, C, H, W), ggamma, gbeta

    return _make(y, (x, gamma, beta), backward)


def attention(x, heads, wq, wk, wv, wo):
    """Multi-head self-attention over the H*W spatial positions, residual add.

    Projections are C-by-C matrices applied per position; softmax runs over
    key positions within each head.
    """
    B, C, H, W = x.shape
    if C % heads != 0:
        raise ConfigurationError(f"channel count {C} not divisible by {heads} heads")
    for name, w in (("wq", wq), ("wk", wk), ("wv", wv), ("wo", wo)):
        if w.shape != (C, C):
            raise DimensionError(f"attention {name} shape {w.shape} != ({C}, {C})")
    d = C // heads
    n = H * W

    tokens = transpose(reshape(x, (B, C, n)), (0, 2, 1))  # (B, n, C)

    def split_heads(t):
        return transpose(reshape(t, (B, n, heads, d)), (0, 2, 1, 3))  # (B, h, n, d)

    q = split_heads(matmul(tokens, wq))
    k = split_heads(matmul(tokens, wk))
    v = split_heads(matmul(tokens, wv))
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(d))
    weights = softmax_last(scores)  # (B, h, n, n)
    mixed = matmul(weights, v)  # (B, h, n, d)
    merged = reshape(transpose(mixed, (0, 2, 1, 3)), (B, n, C))
    out = matmul(merged, wo)
    out = transpose(out, (0, 2, 1))
    return add(x, reshape(out, (B, C, H, W)))


def nearest_upsample_x2(x):
    """Duplicate every pixel into a 2x2 block."""
    if x.data.ndim != 4:
        raise DimensionError(f"nearest_upsample_x2 expects NCHW input, got {x.shape}")
    B, C, H, W = x.shape
    y = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(gy):
        return (gy.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),)

    return _make(y, (x,), backward)


def linear(x, weight, bias):
    """Affine map on the last axis: x @ weight + bias."""
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear shape mismatch: {x.shape} @ {weight.shape}")
    return add(matmul(x, weight), bias)


def channel_concat(tensors):
    return concat(tensors, axis=1)
