"""Numba lane for im2col / col2im.

Parallelism is over channels; every output element is written by exactly one
thread and accumulation order inside a thread is fixed, so results are
bit-stable for any thread count.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def _im2col(xp, kh, kw, stride, ho, wo):
    ci = xp.shape[0]
    cols = np.empty((ci * kh * kw, ho * wo), dtype=np.float32)
    for c in prange(ci):
        for i in range(kh):
            for j in range(kw):
                row = (c * kh + i) * kw + j
                for oy in range(ho):
                    iy = oy * stride + i
                    base = oy * wo
                    for ox in range(wo):
                        cols[row, base + ox] = xp[c, iy, ox * stride + j]
    return cols


@njit(cache=True, parallel=True)
def _col2im(cols, ci, hp, wp, kh, kw, stride, ho, wo):
    xp = np.zeros((ci, hp, wp), dtype=np.float32)
    for c in prange(ci):
        for i in range(kh):
            for j in range(kw):
                row = (c * kh + i) * kw + j
                for oy in range(ho):
                    iy = oy * stride + i
                    base = oy * wo
                    for ox in range(wo):
                        xp[c, iy, ox * stride + j] += cols[row, base + ox]
    return xp


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    ci, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if pad:
        xp = np.zeros((ci, h + 2 * pad, w + 2 * pad), dtype=np.float32)
        xp[:, pad:pad + h, pad:pad + w] = x
    else:
        xp = np.ascontiguousarray(x)
    return _im2col(xp, kh, kw, stride, ho, wo)


def col2im(cols: np.ndarray, ci: int, h: int, w: int,
           kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    xp = _col2im(np.ascontiguousarray(cols), ci, h + 2 * pad, w + 2 * pad,
                 kh, kw, stride, ho, wo)
    if pad:
        return np.ascontiguousarray(xp[:, pad:pad + h, pad:pad + w])
    return xp
