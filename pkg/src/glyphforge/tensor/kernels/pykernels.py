"""Numpy implementations of the im2col/col2im kernels.

This is the fallback lane used when the compiled extension is absent.
Both lanes share the same layout contract:

  cols[(n*oh + y)*ow + x, (c*kh + i)*kw + j] == xp[n, c, y*stride + i, x*stride + j]

so the convolution itself is a single BLAS matmul against the reshaped
kernel in either lane.
"""
import numpy as np

NAME = "numpy"


def im2col(xp, kh, kw, stride, oh, ow, out):
    """Gather sliding windows of a padded [N,C,Hp,Wp] array into `out`."""
    n, c = xp.shape[0], xp.shape[1]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [N, C, oh, ow, kh, kw]
    out[...] = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)


def col2im(cols, xp, kh, kw, stride, oh, ow):
    """Scatter-add column gradients back into the padded array `xp`."""
    n, c = xp.shape[0], xp.shape[1]
    r = cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += r[:, :, i, j]
