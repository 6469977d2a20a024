"""Independent float64 reference implementations used as test oracles.

These are deliberately written straight from the definitions (naive loops or
plain numpy), separate from the package's float32 engine, so finite-difference
checks are not polluted by float32 rounding of the function being probed.
"""

import numpy as np


def conv2d_ref(x, k, stride=1, pad=0, bias=None):
    x = np.asarray(x, np.float64)
    k = np.asarray(k, np.float64)
    ci, h, w = x.shape
    co, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((co, ho, wo))
    for oy in range(ho):
        for ox in range(wo):
            patch = xp[:, oy * stride:oy * stride + kh, ox * stride:ox * stride + kw]
            out[:, oy, ox] = np.tensordot(k, patch, axes=([1, 2, 3], [0, 1, 2]))
    if bias is not None:
        out += np.asarray(bias, np.float64)[:, None, None]
    return out


def conv_transpose2d_ref(y, k, stride=1, pad=0, bias=None):
    y = np.asarray(y, np.float64)
    k = np.asarray(k, np.float64)
    co, hi, wi = y.shape
    _, ci, kh, kw = k.shape
    ho = (hi - 1) * stride + kh - 2 * pad
    wo = (wi - 1) * stride + kw - 2 * pad
    xp = np.zeros((ci, ho + 2 * pad, wo + 2 * pad))
    for iy in range(hi):
        for ix in range(wi):
            contrib = np.tensordot(y[:, iy, ix], k, axes=(0, 0))  # (ci,kh,kw)
            xp[:, iy * stride:iy * stride + kh, ix * stride:ix * stride + kw] += contrib
    out = xp[:, pad:pad + ho, pad:pad + wo]
    if bias is not None:
        out = out + np.asarray(bias, np.float64)[:, None, None]
    return out


def sigmoid_ref(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, np.float64)))


def leaky_relu_ref(x, slope):
    x = np.asarray(x, np.float64)
    return np.where(x >= 0, x, slope * x)


def bilinear2x_mat_ref(n):
    m = np.zeros((2 * n, n))
    for i in range(2 * n):
        src = (i + 0.5) / 2.0 - 0.5
        j0 = int(np.floor(src))
        f = src - j0
        m[i, min(max(j0, 0), n - 1)] += 1.0 - f
        m[i, min(max(j0 + 1, 0), n - 1)] += f
    return m


def upsample2x_ref(x):
    x = np.asarray(x, np.float64)
    c, h, w = x.shape
    mh, mw = bilinear2x_mat_ref(h), bilinear2x_mat_ref(w)
    return np.einsum("hH,cHW,wW->chw", mh, x, mw)


def avg_pool_ref(x, f):
    x = np.asarray(x, np.float64)
    c, h, w = x.shape
    return x.reshape(c, h // f, f, w // f, f).mean(axis=(2, 4))
