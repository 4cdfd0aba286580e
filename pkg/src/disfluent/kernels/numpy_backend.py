"""Pure-numpy im2col/col2im kernels, the fallback when the compiled extension
is unavailable.

Both functions operate on a single sample laid out (C, H, W) and use the
column layout (C*kh*kw, out_h*out_w) with the row index varying fastest over
kernel width, then kernel height, then input channel.
"""

import numpy as np

NAME = "numpy"


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, sh, sw, ph, pw, out=None):
    """Unfold (C, H, W) into convolution columns (C*kh*kw, oh*ow)."""
    c, h, w = x.shape
    oh = conv_out_size(h, kh, sh, ph)
    ow = conv_out_size(w, kw, sw, pw)
    if ph or pw:
        xp = np.zeros((c, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
        xp[:, ph:ph + h, pw:pw + w] = x
    else:
        xp = x
    if out is None:
        out = np.empty((c * kh * kw, oh * ow), dtype=x.dtype)
    cols = out.reshape(c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i:i + sh * oh:sh, j:j + sw * ow:sw]
    return out


def col2im(cols, c, h, w, kh, kw, sh, sw, ph, pw, out=None):
    """Fold convolution columns back onto a (C, H, W) grid, summing overlaps."""
    oh = conv_out_size(h, kh, sh, ph)
    ow = conv_out_size(w, kw, sw, pw)
    xp = np.zeros((c, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    cr = cols.reshape(c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            xp[:, i:i + sh * oh:sh, j:j + sw * ow:sw] += cr[:, i, j]
    x = xp[:, ph:ph + h, pw:pw + w]
    if out is None:
        return np.ascontiguousarray(x)
    out[...] = x
    return out


def im2col_cnhw(x, kh, kw, sh, sw, ph, pw, out=None):
    """Batched unfold: (C, N, H, W) -> (C*kh*kw, N*oh*ow).

    Keeping channels outermost lets one GEMM cover the whole batch with no
    transposes between layers.
    """
    c, n, h, w = x.shape
    oh = conv_out_size(h, kh, sh, ph)
    ow = conv_out_size(w, kw, sw, pw)
    if ph or pw:
        xp = np.zeros((c, n, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
        xp[:, :, ph:ph + h, pw:pw + w] = x
    else:
        xp = x
    if out is None:
        out = np.empty((c * kh * kw, n * oh * ow), dtype=x.dtype)
    cols = out.reshape(c, kh, kw, n, oh, ow)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw]
    return out


def col2im_cnhw(cols, c, n, h, w, kh, kw, sh, sw, ph, pw, out=None):
    """Batched fold: (C*kh*kw, N*oh*ow) -> (C, N, H, W), summing overlaps."""
    oh = conv_out_size(h, kh, sh, ph)
    ow = conv_out_size(w, kw, sw, pw)
    xp = np.zeros((c, n, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    cr = cols.reshape(c, kh, kw, n, oh, ow)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += cr[:, i, j]
    x = xp[:, :, ph:ph + h, pw:pw + w]
    if out is None:
        return np.ascontiguousarray(x)
    out[...] = x
    return out
