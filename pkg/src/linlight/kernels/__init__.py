"""Kernel dispatch: one public API, two lanes (numba / numpy).

The lane is fixed at import by ``linlight.backend`` (env var ``LL_BACKEND``).
Everything here works on plain float32 numpy arrays; autodiff wiring lives in
``linlight.tensor``.
"""

import numpy as np

from .. import backend
from . import conv_numpy, raster_numpy, rays_numpy

if backend.HAVE_NUMBA:
    from . import conv_numba as _conv
    from . import raster_numba as _raster
    from . import rays_numba as _rays
else:
    _conv = conv_numpy
    _raster = raster_numpy
    _rays = rays_numpy

# lanes kept addressable by name for the benchmark
LANES = {"numpy": (conv_numpy, raster_numpy, rays_numpy)}
if backend.HAVE_NUMBA:
    from . import conv_numba, raster_numba, rays_numba
    LANES["numba"] = (conv_numba, raster_numba, rays_numba)


def _matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if backend.accumulate_f64():
        return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)
    return a @ b


# ---------------------------------------------------------------------------
# convolution primitives (shared by conv2d and its transpose)
# ---------------------------------------------------------------------------

def conv2d_fw(x, kernel, stride, pad, im2col=None):
    """x (Ci,H,W) * kernel (Co,Ci,kh,kw) -> (Co,Ho,Wo)."""
    co, ci, kh, kw = kernel.shape
    h, w = x.shape[1], x.shape[2]
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    cols = (im2col or _conv.im2col)(x, kh, kw, stride, pad)
    out = _matmul(kernel.reshape(co, -1), cols)
    return out.reshape(co, ho, wo)


def conv2d_bw_input(gy, kernel, stride, pad, h, w, col2im=None):
    """Gradient w.r.t. conv2d input; also the forward of conv_transpose2d."""
    co, ci, kh, kw = kernel.shape
    cols = _matmul(kernel.reshape(co, -1).T, gy.reshape(co, -1))
    return (col2im or _conv.col2im)(cols, ci, h, w, kh, kw, stride, pad)


def conv2d_bw_kernel(x, gy, stride, pad, kh, kw, im2col=None):
    """Gradient w.r.t. the conv2d kernel."""
    co = gy.shape[0]
    cols = (im2col or _conv.im2col)(x, kh, kw, stride, pad)
    gk = _matmul(gy.reshape(co, -1), cols.T)
    return gk.reshape(co, x.shape[0], kh, kw)


# ---------------------------------------------------------------------------
# rasterization / scatter
# ---------------------------------------------------------------------------

def raster_core(pts, z, tris, h, w, use_z):
    return _raster.raster_core(
        np.ascontiguousarray(pts, dtype=np.float32),
        np.ascontiguousarray(z, dtype=np.float32),
        np.ascontiguousarray(tris, dtype=np.int32), h, w, use_z)


def scatter_tex(gtex, tidx, wgt, gpix):
    _raster.scatter_tex(gtex, tidx, wgt, gpix)


# ---------------------------------------------------------------------------
# BVH build (plain numpy, shared) + visibility queries
# ---------------------------------------------------------------------------

class Bvh:
    """Median-split BVH over triangles, stored as flat arrays."""

    __slots__ = ("v0", "e1", "e2", "nmin", "nmax", "nleft", "nright",
                 "nstart", "ncount", "torder")

    def __init__(self, verts: np.ndarray, faces: np.ndarray, leaf_size: int = 4):
        v0 = verts[faces[:, 0]].astype(np.float32)
        v1 = verts[faces[:, 1]].astype(np.float32)
        v2 = verts[faces[:, 2]].astype(np.float32)
        self.v0 = np.ascontiguousarray(v0)
        self.e1 = np.ascontiguousarray(v1 - v0)
        self.e2 = np.ascontiguousarray(v2 - v0)
        tmin = np.minimum(np.minimum(v0, v1), v2)
        tmax = np.maximum(np.maximum(v0, v1), v2)
        cent = (v0 + v1 + v2) / 3.0

        nodes = []          # [bmin, bmax, left, right, start, count]
        order: list[np.ndarray] = []
        n_ordered = [0]

        def rec(idx: np.ndarray) -> int:
            nid = len(nodes)
            nodes.append(None)
            bmin = tmin[idx].min(axis=0)
            bmax = tmax[idx].max(axis=0)
            if len(idx) <= leaf_size:
                nodes[nid] = (bmin, bmax, -1, -1, n_ordered[0], len(idx))
                order.append(idx)
                n_ordered[0] += len(idx)
                return nid
            c = cent[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            srt = idx[np.argsort(c[:, axis], kind="stable")]
            mid = len(srt) // 2
            left = rec(srt[:mid])
            right = rec(srt[mid:])
            nodes[nid] = (bmin, bmax, left, right, 0, 0)
            return nid

        rec(np.arange(len(faces)))
        self.nmin = np.ascontiguousarray([n[0] for n in nodes], dtype=np.float32)
        self.nmax = np.ascontiguousarray([n[1] for n in nodes], dtype=np.float32)
        self.nleft = np.array([n[2] for n in nodes], dtype=np.int32)
        self.nright = np.array([n[3] for n in nodes], dtype=np.int32)
        self.nstart = np.array([n[4] for n in nodes], dtype=np.int32)
        self.ncount = np.array([n[5] for n in nodes], dtype=np.int32)
        self.torder = np.ascontiguousarray(np.concatenate(order), dtype=np.int32)


def vis_matrix(bvh: Bvh, origins: np.ndarray, dirs: np.ndarray,
               tmin: float = 1e-4) -> np.ndarray:
    """(P,L) uint8 matrix: 1 where the ray from origins[p] along dirs[l]
    escapes the mesh, 0 where occluded."""
    if origins.size == 0 or dirs.size == 0:
        return np.ones((origins.shape[0], dirs.shape[0]), dtype=np.uint8)
    return _rays.vis_matrix(
        np.ascontiguousarray(origins, dtype=np.float32),
        np.ascontiguousarray(dirs, dtype=np.float32),
        bvh.v0, bvh.e1, bvh.e2,
        bvh.nmin, bvh.nmax, bvh.nleft, bvh.nright,
        bvh.nstart, bvh.ncount, bvh.torder, np.float32(tmin))
