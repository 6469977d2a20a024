"""Dense float32 tensors with reverse-mode automatic differentiation.

Design follows the usual tape-free closure style: every differentiable op
returns a new :class:`Tensor` holding references to its parents and a closure
that scatters the output gradient back to them.  ``backward`` topologically
orders the recorded ops (iteratively, graphs get deep) and runs each closure
exactly once.

Only the layer types the relighting networks need are provided: conv2d and
its exact transpose, leaky ReLU, sigmoid, elementwise arithmetic, bilinear
2x upsampling, average pooling, channel concat/slice, spatial shifts and a
couple of reductions.  Everything is float32; conv reductions optionally
accumulate in float64 behind the ``LL_ACC64`` env flag.
"""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels

__all__ = [
    "Tensor", "no_grad", "backward", "add", "sub", "mul", "div", "neg",
    "scale", "add_scalar", "leaky_relu", "relu", "sigmoid", "sqrt", "absval",
    "tsum", "tmean", "reshape", "concat", "slice_axis0", "tile_spatial", "shift2d",
    "upsample_bilinear2x", "avg_pool2d", "conv2d", "conv_transpose2d",
    "matvec", "cross3", "normalize_channels", "dot_channels",
]

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (inference paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None
        self._op = "leaf"

    # -- construction helpers ------------------------------------------------
    @staticmethod
    def zeros(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=np.float32), requires_grad)

    @staticmethod
    def ones(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.ones(shape, dtype=np.float32), requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        """Stop-gradient: same buffer, no graph edge."""
        return Tensor(self.data, requires_grad=False)

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, grad={self.requires_grad})"


def _make(data: np.ndarray, parents: Sequence[Tensor], bw, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = bw
        out._op = op
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.astype(np.float32, copy=False)


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad leaf reachable from ``loss``.

    Rejects non-scalar losses.  Each recorded op's backward rule runs exactly
    once, in reverse topological order.
    """
    if loss.data.shape != ():
        raise ValueError(
            f"backward: loss must be a scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    # iterative topological sort (graphs can exceed the recursion limit)
    topo: list[Tensor] = []
    visited = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones((), dtype=np.float32)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))
    return _make(data, (a, b), bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))
    return _make(data, (a, b), bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))
    return _make(data, (a, b), bw, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def bw(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
    return _make(data, (a, b), bw, "div")


def neg(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, -g)
    return _make(-a.data, (a,), bw, "neg")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bw(g):
        _accum(a, g * np.float32(s))
    return _make(a.data * np.float32(s), (a,), bw, "scale")


def add_scalar(a: Tensor, c: float) -> Tensor:
    def bw(g):
        _accum(a, g)
    return _make(a.data + np.float32(c), (a,), bw, "add_scalar")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    if not (0.0 <= slope < 1.0):
        raise ValueError(f"leaky_relu: slope must be in [0,1), got {slope}")
    pos = a.data >= 0
    data = np.where(pos, a.data, np.float32(slope) * a.data)

    def bw(g):
        _accum(a, np.where(pos, g, np.float32(slope) * g))
    return _make(data, (a,), bw, "leaky_relu")


def relu(a: Tensor) -> Tensor:
    return leaky_relu(a, 0.0)


def sigmoid(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-a.data.astype(np.float64)))
    y = y.astype(np.float32)

    def bw(g):
        _accum(a, g * y * (1.0 - y))
    return _make(y, (a,), bw, "sigmoid")


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)

    def bw(g):
        _accum(a, g * (0.5 / np.maximum(y, 1e-12)))
    return _make(y, (a,), bw, "sqrt")


def absval(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def bw(g):
        _accum(a, g * sign)
    return _make(np.abs(a.data), (a,), bw, "abs")


# ---------------------------------------------------------------------------
# reductions / shape ops
# ---------------------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).astype(np.float32))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.data.shape).astype(np.float32))
    return _make(data, (a,), bw, "sum")


def tmean(a: Tensor) -> Tensor:
    return scale(tsum(a), 1.0 / a.data.size)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def bw(g):
        _accum(a, g.reshape(a.data.shape))
    return _make(data, (a,), bw, "reshape")


def concat(ts: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(ts)
    data = np.concatenate([t.data for t in ts], axis=axis)
    splits = np.cumsum([t.data.shape[axis] for t in ts])[:-1]

    def bw(g):
        for t, piece in zip(ts, np.split(g, splits, axis=axis)):
            _accum(t, piece)
    return _make(data, ts, bw, "concat")


def slice_axis0(a: Tensor, start: int, stop: int) -> Tensor:
    data = a.data[start:stop].copy()

    def bw(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        _accum(a, full)
    return _make(data, (a,), bw, "slice0")


def tile_spatial(a: Tensor, h: int, w: int) -> Tensor:
    """(C,1,1) -> (C,h,w) broadcast; gradient sums over the tiled extent."""
    if a.data.ndim != 3 or a.data.shape[1:] != (1, 1):
        raise ValueError(f"tile_spatial expects (C,1,1), got {a.data.shape}")
    data = np.broadcast_to(a.data, (a.data.shape[0], h, w)).copy()

    def bw(g):
        _accum(a, g.sum(axis=(1, 2), keepdims=True))
    return _make(data, (a,), bw, "tile")


def shift2d(a: Tensor, dy: int, dx: int) -> Tensor:
    """Zero-filled spatial shift of a (C,H,W) map by (dy,dx)."""
    c, h, w = a.data.shape
    data = np.zeros_like(a.data)
    ys, yd = (dy, 0) if dy >= 0 else (0, -dy)
    xs, xd = (dx, 0) if dx >= 0 else (0, -dx)
    hh, ww = h - abs(dy), w - abs(dx)
    if hh > 0 and ww > 0:
        data[:, ys:ys + hh, xs:xs + ww] = a.data[:, yd:yd + hh, xd:xd + ww]

    def bw(g):
        full = np.zeros_like(a.data)
        if hh > 0 and ww > 0:
            full[:, yd:yd + hh, xd:xd + ww] = g[:, ys:ys + hh, xs:xs + ww]
        _accum(a, full)
    return _make(data, (a,), bw, "shift2d")


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

_bilin_cache: dict[int, np.ndarray] = {}


def _bilin_mat(n: int) -> np.ndarray:
    """(2n, n) row-stochastic matrix for 1-D bilinear 2x upsampling."""
    m = _bilin_cache.get(n)
    if m is None:
        m = np.zeros((2 * n, n), dtype=np.float32)
        for i in range(2 * n):
            src = (i + 0.5) / 2.0 - 0.5
            j0 = int(np.floor(src))
            f = src - j0
            j0c = min(max(j0, 0), n - 1)
            j1c = min(max(j0 + 1, 0), n - 1)
            m[i, j0c] += 1.0 - f
            m[i, j1c] += f
        _bilin_cache[n] = m
    return m


def upsample_bilinear2x(a: Tensor) -> Tensor:
    c, h, w = a.data.shape
    mh, mw = _bilin_mat(h), _bilin_mat(w)
    t = np.tensordot(mh, a.data, axes=(1, 1)).transpose(1, 0, 2)  # (c,2h,w)
    data = np.ascontiguousarray(t @ mw.T)

    def bw(g):
        t2 = g @ mw                                # (c,2h,w)
        gx = np.tensordot(mh.T, t2, axes=(1, 1)).transpose(1, 0, 2)
        _accum(a, np.ascontiguousarray(gx))
    return _make(data, (a,), bw, "upsample2x")


def avg_pool2d(a: Tensor, factor: int) -> Tensor:
    c, h, w = a.data.shape
    if h % factor or w % factor:
        raise ValueError(f"avg_pool2d: {h}x{w} not divisible by {factor}")
    data = a.data.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))

    def bw(g):
        gx = np.repeat(np.repeat(g, factor, axis=1), factor, axis=2) / (factor * factor)
        _accum(a, gx.astype(np.float32))
    return _make(data, (a,), bw, "avg_pool")


# ---------------------------------------------------------------------------
# convolution and its transpose
# ---------------------------------------------------------------------------

def _check_conv_shapes(x: Tensor, kernel: Tensor, stride: int, what: str, ch_axis: int):
    if x.data.ndim != 3:
        raise ValueError(f"{what}: input must be rank 3 (C,H,W), got rank {x.data.ndim}")
    if kernel.data.ndim != 4:
        raise ValueError(f"{what}: kernel must be rank 4, got rank {kernel.data.ndim}")
    if stride < 1:
        raise ValueError(f"{what}: stride must be >= 1, got {stride}")
    if x.data.shape[0] != kernel.data.shape[ch_axis]:
        axis_name = "C_in" if ch_axis == 1 else "C_out"
        raise ValueError(
            f"{what}: input has {x.data.shape[0]} channels but kernel "
            f"dimension {axis_name} is {kernel.data.shape[ch_axis]}")


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0,
           bias: Optional[Tensor] = None) -> Tensor:
    """Cross-correlation of (Ci,H,W) with (Co,Ci,kh,kw) -> (Co,Ho,Wo)."""
    _check_conv_shapes(x, kernel, stride, "conv2d", 1)
    co, ci, kh, kw = kernel.data.shape
    h, w = x.data.shape[1:]
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ValueError(
            f"conv2d: spatial extent {h}x{w} (pad {padding}) smaller than kernel {kh}x{kw}")
    if bias is not None and bias.data.shape != (co,):
        raise ValueError(
            f"conv2d: bias shape {bias.data.shape} does not match C_out={co}")
    data = kernels.conv2d_fw(x.data, kernel.data, stride, padding)
    if bias is not None:
        data = data + bias.data[:, None, None]
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            _accum(x, kernels.conv2d_bw_input(g, kernel.data, stride, padding, h, w))
        if kernel.requires_grad:
            _accum(kernel, kernels.conv2d_bw_kernel(x.data, g, stride, padding, kh, kw))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(1, 2)))
    return _make(data, parents, bw, "conv2d")


def conv_transpose2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0,
                     bias: Optional[Tensor] = None) -> Tensor:
    """Exact adjoint of conv2d with the same kernel, stride and padding.

    Maps (Co,Hi,Wi) -> (Ci,Ho,Wo) with Ho = (Hi-1)*stride + kh - 2*padding,
    satisfying <conv2d(x;K), y> == <x, conv_transpose2d(y;K)>.
    """
    _check_conv_shapes(x, kernel, stride, "conv_transpose2d", 0)
    co, ci, kh, kw = kernel.data.shape
    hi, wi = x.data.shape[1:]
    ho = (hi - 1) * stride + kh - 2 * padding
    wo = (wi - 1) * stride + kw - 2 * padding
    if ho < 1 or wo < 1:
        raise ValueError(
            f"conv_transpose2d: output extent {ho}x{wo} is empty "
            f"(input {hi}x{wi}, kernel {kh}x{kw}, stride {stride}, padding {padding})")
    if bias is not None and bias.data.shape != (ci,):
        raise ValueError(
            f"conv_transpose2d: bias shape {bias.data.shape} does not match C_in={ci}")
    data = kernels.conv2d_bw_input(np.ascontiguousarray(x.data), kernel.data,
                                   stride, padding, ho, wo)
    if bias is not None:
        data = data + bias.data[:, None, None]
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            _accum(x, kernels.conv2d_fw(g, kernel.data, stride, padding))
        if kernel.requires_grad:
            _accum(kernel, kernels.conv2d_bw_kernel(g, x.data, stride, padding, kh, kw))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(1, 2)))
    return _make(data, parents, bw, "conv_transpose2d")


def matvec(w: Tensor, x: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Dense (m,n) @ (n,) -> (m,)."""
    if w.data.ndim != 2 or x.data.ndim != 1 or w.data.shape[1] != x.data.shape[0]:
        raise ValueError(
            f"matvec: incompatible shapes {w.data.shape} @ {x.data.shape}")
    data = w.data @ x.data
    if bias is not None:
        data = data + bias.data
    parents = (w, x) if bias is None else (w, x, bias)

    def bw(g):
        if w.requires_grad:
            _accum(w, np.outer(g, x.data))
        if x.requires_grad:
            _accum(x, w.data.T @ g)
        if bias is not None and bias.requires_grad:
            _accum(bias, g)
    return _make(data, parents, bw, "matvec")


# ---------------------------------------------------------------------------
# small composites used by the shading/geometry graph
# ---------------------------------------------------------------------------

def dot_channels(a: Tensor, b: Tensor) -> Tensor:
    """Per-texel dot product over the channel axis: (3,H,W)x(3,H,W)->(1,H,W)."""
    return tsum(mul(a, b), axis=0, keepdims=True)


def cross3(a: Tensor, b: Tensor) -> Tensor:
    """Channelwise 3-D cross product of (3,H,W) maps."""
    ax, ay, az = (slice_axis0(a, i, i + 1) for i in range(3))
    bx, by, bz = (slice_axis0(b, i, i + 1) for i in range(3))
    cx = sub(mul(ay, bz), mul(az, by))
    cy = sub(mul(az, bx), mul(ax, bz))
    cz = sub(mul(ax, by), mul(ay, bx))
    return concat([cx, cy, cz], axis=0)


def normalize_channels(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize (3,H,W) vectors to unit length per texel."""
    n2 = tsum(mul(a, a), axis=0, keepdims=True)
    return div(a, sqrt(add_scalar(n2, eps)))
