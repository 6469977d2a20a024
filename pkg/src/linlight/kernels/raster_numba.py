"""Numba lane for triangle rasterization (camera images and UV-space unwrap).

Triangles are processed serially in index order, so z-buffer ties and
overwrites resolve identically on every run.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def raster_core(pts, z, tris, h, w, use_z):
    """Rasterize 2D triangles at pixel centers.

    pts: (V,2) float32 pixel coordinates; z: (V,) camera depth (>0 in front);
    tris: (F,3) int32.  A vertex with z <= 0 drops its triangle when use_z.
    Returns (tri_id (h,w) int32 -1 empty, bary (3,h,w) float32, depth (h,w),
    n_degenerate).
    """
    tri_id = np.full((h, w), -1, dtype=np.int32)
    bary = np.zeros((3, h, w), dtype=np.float32)
    depth = np.full((h, w), np.inf, dtype=np.float32)
    ndeg = 0
    for f in range(tris.shape[0]):
        i0, i1, i2 = tris[f, 0], tris[f, 1], tris[f, 2]
        if use_z and (z[i0] <= 0 or z[i1] <= 0 or z[i2] <= 0):
            continue
        x0, y0 = pts[i0, 0], pts[i0, 1]
        x1, y1 = pts[i1, 0], pts[i1, 1]
        x2, y2 = pts[i2, 0], pts[i2, 1]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area) < 1e-12:
            ndeg += 1
            continue
        inv_area = 1.0 / area
        xmin = max(int(np.floor(min(x0, min(x1, x2)) - 0.5)), 0)
        xmax = min(int(np.ceil(max(x0, max(x1, x2)) - 0.5)), w - 1)
        ymin = max(int(np.floor(min(y0, min(y1, y2)) - 0.5)), 0)
        ymax = min(int(np.ceil(max(y0, max(y1, y2)) - 0.5)), h - 1)
        if use_z:
            iz0 = 1.0 / z[i0]
            iz1 = 1.0 / z[i1]
            iz2 = 1.0 / z[i2]
        else:
            iz0 = iz1 = iz2 = 1.0
        for py in range(ymin, ymax + 1):
            cy = py + 0.5
            for px in range(xmin, xmax + 1):
                cx = px + 0.5
                w0 = ((x1 - cx) * (y2 - cy) - (x2 - cx) * (y1 - cy)) * inv_area
                w1 = ((x2 - cx) * (y0 - cy) - (x0 - cx) * (y2 - cy)) * inv_area
                w2 = 1.0 - w0 - w1
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                if use_z:
                    izp = w0 * iz0 + w1 * iz1 + w2 * iz2
                    dz = 1.0 / izp
                    if dz >= depth[py, px]:
                        continue
                    depth[py, px] = dz
                tri_id[py, px] = f
                bary[0, py, px] = w0
                bary[1, py, px] = w1
                bary[2, py, px] = w2
    return tri_id, bary, depth, ndeg


@njit(cache=True)
def scatter_tex(gtex, tidx, wgt, gpix):
    """Accumulate pixel grads into texel grads, serial fixed order."""
    npix = tidx.shape[0]
    c = gtex.shape[0]
    for p in range(npix):
        for k in range(4):
            t = tidx[p, k]
            ww = wgt[p, k]
            for ch in range(c):
                gtex[ch, t] += ww * gpix[ch, p]
