"""Pure-numpy im2col/col2im, the fallback for the compiled kernels.

Both implementations fill the same layouts as the Cython extension and add
partial sums in the same per-destination order, so backends agree bitwise.
"""

import numpy as np


def im2col(xp: np.ndarray, k: int, stride: int, cols: np.ndarray) -> None:
    """Gather k*k patches of ``xp`` [N,C,Hp,Wp] into ``cols`` [N, C*k*k, OH*OW]."""
    n, c, hp, wp = xp.shape
    oh = (hp - k) // stride + 1
    ow = (wp - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [N, C, OH, OW, k, k]
    cols[...] = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, oh * ow)


def col2im(cols: np.ndarray, xp: np.ndarray, k: int, stride: int) -> None:
    """Scatter-add columns back into the zero-initialized image ``xp``."""
    n, c, hp, wp = xp.shape
    oh = (hp - k) // stride + 1
    ow = (wp - k) // stride + 1
    c6 = cols.reshape(n, c, k, k, oh, ow)
    for ky in range(k):
        for kx in range(k):
            xp[
                :,
                :,
                ky : ky + stride * (oh - 1) + 1 : stride,
                kx : kx + stride * (ow - 1) + 1 : stride,
            ] += c6[:, :, ky, kx]
