"""Pure-numpy kernels for the 3x3 same-padding conv and 2x2 maxpool.

This is the fallback backend; the compiled extension in ``_conv.pyx``
implements the same contracts. Convolutions run as one im2col copy plus a
BLAS matmul, so the fallback is usable for real training, not just testing.

Layout conventions shared by both backends: activations are (N, H, W, C)
float64, conv weights (3, 3, C_in, C_out), stride 1, zero padding 1. The
pool is 2x2 stride 2; odd trailing rows/columns are dropped, and ties route
the gradient to the first maximal element in window row-major order.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, h, wd, cin = x.shape
    cout = w.shape[3]
    xpad = np.zeros((n, h + 2, wd + 2, cin), dtype=np.float64)
    xpad[:, 1:-1, 1:-1, :] = x
    # (N, H, W, Cin, 3, 3) windows -> (N*H*W, Cin*9)
    cols = sliding_window_view(xpad, (3, 3), axis=(1, 2)).reshape(n * h * wd, cin * 9)
    wmat = w.transpose(2, 0, 1, 3).reshape(cin * 9, cout)
    y = cols @ wmat + b
    return y.reshape(n, h, wd, cout)


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, h, wd, cin = x.shape
    cout = w.shape[3]
    xpad = np.zeros((n, h + 2, wd + 2, cin), dtype=np.float64)
    xpad[:, 1:-1, 1:-1, :] = x
    cols = sliding_window_view(xpad, (3, 3), axis=(1, 2)).reshape(n * h * wd, cin * 9)
    dy2 = dy.reshape(n * h * wd, cout)

    dw = (cols.T @ dy2).reshape(cin, 3, 3, cout).transpose(1, 2, 0, 3)
    db = dy2.sum(axis=0)

    wmat = w.transpose(2, 0, 1, 3).reshape(cin * 9, cout)
    dcols = (dy2 @ wmat.T).reshape(n, h, wd, cin, 3, 3)
    dxpad = np.zeros((n, h + 2, wd + 2, cin), dtype=np.float64)
    for i in range(3):
        for j in range(3):
            dxpad[:, i : i + h, j : j + wd, :] += dcols[:, :, :, :, i, j]
    return dxpad[:, 1:-1, 1:-1, :], np.ascontiguousarray(dw), db


def maxpool2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    win = (
        x[:, : ho * 2, : wo * 2, :]
        .reshape(n, ho, 2, wo, 2, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n, ho, wo, 4, c)
    )
    idx = np.argmax(win, axis=3).astype(np.int8)
    y = np.take_along_axis(win, idx[:, :, :, None, :].astype(np.intp), axis=3)[
        :, :, :, 0, :
    ]
    return y, idx


def maxpool2_backward(dy: np.ndarray, idx: np.ndarray, h: int, w: int) -> np.ndarray:
    n, ho, wo, c = dy.shape
    dwin = np.zeros((n, ho, wo, 4, c), dtype=np.float64)
    np.put_along_axis(
        dwin, idx[:, :, :, None, :].astype(np.intp), dy[:, :, :, None, :], axis=3
    )
    dx = np.zeros((n, h, w, c), dtype=np.float64)
    dx[:, : ho * 2, : wo * 2, :] = (
        dwin.reshape(n, ho, wo, 2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, ho * 2, wo * 2, c)
    )
    return dx
