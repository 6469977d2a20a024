"""Pure-numpy conv kernels: im2col / col2im feeding one BLAS matmul."""

import numpy as np


def pad2d(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    c, h, w = x.shape
    out = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    out[:, pad:pad + h, pad:pad + w] = x
    return out


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(Ci,H,W) -> (Ci*kh*kw, Ho*Wo) patch matrix."""
    ci, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    xp = pad2d(x, pad)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (ci, ho, wo, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2).reshape(ci * kh * kw, ho * wo))


def col2im(cols: np.ndarray, ci: int, h: int, w: int,
           kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of im2col: scatter-add patches back to (Ci,H,W)."""
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    xp = np.zeros((ci, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    patches = cols.reshape(ci, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            xp[:, i:i + ho * stride:stride, j:j + wo * stride:stride] += patches[:, i, j]
    if pad:
        return np.ascontiguousarray(xp[:, pad:pad + h, pad:pad + w])
    return xp
